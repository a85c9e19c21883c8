#include <doctest.h>

#include "stprompt/harness.hpp"
#include "stprompt/language.hpp"
#include "support.hpp"

using namespace stp;

TEST_CASE("parsing") {
    const TokenSequence s = parse_instruction("What happens at <time 0.5>");
    REQUIRE(s.size() == 4);
    CHECK(s.tokens[0].kind == Token::Kind::word);
    CHECK(s.tokens[0].text == "what");
    CHECK(s.tokens[0].id == word_id("what"));
    CHECK(s.tokens[3].kind == Token::Kind::time);
    CHECK(s.tokens[3].t == 0.5);

    const TokenSequence loc = parse_instruction("<loc 0 0 0>");
    REQUIRE(loc.size() == 1);
    CHECK(loc.tokens[0].kind == Token::Kind::position);
    CHECK(loc.tokens[0].xyz == Vec3{0.0, 0.0, 0.0});
    CHECK(loc.literal_count() == 1);
}

TEST_CASE("malformed markers report their offset") {
    auto offset_of = [](const char* text) {
        try {
            parse_instruction(text);
        } catch (const ParseError& e) {
            return static_cast<long>(e.offset());
        }
        return -1L;
    };
    CHECK(offset_of("go to <loc 0.1 0.2>") == 6);
    CHECK(offset_of("at <time 0.5") == 3);
    CHECK(offset_of("at <time abc>") == 9);
    CHECK(offset_of("<loc 2 0 0>") == 5);
}

TEST_CASE("render then parse is the identity") {
    for (const char* text : {"describe the object at <loc 0.25 -0.5 1> at <time 0.2>",
                             "When does the RED object appear?", "<time 1> <time 0> words, words",
                             "where is the cyan object at <time 0.3333333333333333>"}) {
        const TokenSequence s = parse_instruction(text);
        CHECK(parse_instruction(render(s)) == s);
    }
    CHECK(strip_literals(parse_instruction("at <time 0.5> the <loc 0 0 0>")).size() == 2);
}

TEST_CASE("word ids stay in range") {
    for (const char* w : {"a", "object", "zzzzzzzz", ""}) CHECK(word_id(w, 17) < 17);
}

namespace {

struct LangFixture {
    ExperimentConfig config = ExperimentConfig::defaults();
    ParamStore store;
    LangFixture() { init_parameters(store, config, 3); }
};

}  // namespace

TEST_CASE("language and vision share one Fourier encoder") {
    LangFixture fx;
    const FourierEncoder enc = FourierEncoder::from_store(fx.store);
    Rng rng(41);
    Matrix xyz(6, 3), t(6, 1);
    for (auto& v : xyz.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : t.data()) v = rng.uniform();
    CHECK(text_position_features(enc, xyz) == encode_position(enc, xyz));
    const Matrix vision_t = encode_time(enc, t, std::vector<double>(6, 0.0), 6);
    CHECK(max_abs_diff(text_time_features(enc, t) * (1.0 + 1.0 / 6.0), vision_t) < 1e-15);

    // The embedding reads the shared parameters, not a private copy.
    const TokenSequence seq = parse_instruction("at <loc 0.1 0.2 0.3>");
    const Matrix before = embed_sequence(seq, fx.store, TextCoordMode::encoded);
    for (const auto& name : group_parameters(fx.store, "fourier")) fx.store.get_mut(name) *= 1.5;
    CHECK(max_abs_diff(before, embed_sequence(seq, fx.store, TextCoordMode::encoded)) > 1e-6);
}

TEST_CASE("literal rows") {
    LangFixture fx;
    const TokenSequence seq = parse_instruction("from <time 0.4> to <time 0.4> near <loc 0.5 0 -0.5>");
    const Matrix e = embed_sequence(seq, fx.store, TextCoordMode::encoded);
    CHECK(e.row(1)[0] == e.row(3)[0]);
    CHECK(max_abs_diff(slice_rows(e, 1, 1), slice_rows(e, 3, 1)) == 0.0);

    SUBCASE("zero scales leave the placeholder") {
        fx.store.get_mut("lang.ws") = Matrix(1, fx.store.get("lang.ws").cols());
        fx.store.get_mut("lang.wt") = Matrix(1, fx.store.get("lang.wt").cols());
        const Matrix z = embed_sequence(seq, fx.store, TextCoordMode::encoded);
        for (std::size_t r : {1u, 3u, 5u}) CHECK(max_abs_diff(slice_rows(z, r, 1), fx.store.get("lang.placeholder")) == 0.0);
    }
    SUBCASE("literal contribution is linear in the scale") {
        const Matrix ws = fx.store.get("lang.ws");
        auto at = [&](double lambda) {
            fx.store.get_mut("lang.ws") = ws * lambda;
            return embed_sequence(seq, fx.store, TextCoordMode::encoded);
        };
        const Matrix e0 = at(0.0), e_half = at(0.5), e1 = at(1.0);
        CHECK(max_abs_diff((e1 - e0) * 0.5, e_half - e0) < 1e-15);
    }
    SUBCASE("mode none drops literals") {
        CHECK(embed_sequence(seq, fx.store, TextCoordMode::none).rows() == 3);
    }
}

TEST_CASE("embedding gradients pass the oracle in every mode") {
    for (TextCoordMode mode : {TextCoordMode::none, TextCoordMode::raw, TextCoordMode::encoded}) {
        for (bool tied : {false, true}) {
            ExperimentConfig c = ExperimentConfig::defaults();
            c.model.tie_scales = tied;
            c.model.vocab = 32;
            ParamStore store;
            init_parameters(store, c, 4);
            set_trainable(store, {"lang.table", "lang.coord", "fourier"});
            const TokenSequence seq = parse_instruction("where is it at <time 0.6> near <loc 0.1 -0.2 0.3>", 32);
            Rng rng(42);
            const Matrix probe = embed_sequence(seq, store, mode);
            const Matrix w = stp::testing::random_matrix(probe.rows(), probe.cols(), rng);
            LanguageCache cache;
            embed_sequence(seq, store, mode, &cache);
            store.zero_grads();
            embed_sequence_backward(store, cache, w);
            const FdReport r = fd_check(
                [&](const ParamStore& p) { return stp::testing::weighted_sum(embed_sequence(seq, p, mode), w); }, store,
                1e-6, 1e-4);
            CAPTURE(to_string(mode));
            CHECK(r.passed());
        }
    }
}
