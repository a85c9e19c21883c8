#include "stprompt/language.hpp"

#include <cctype>
#include <charconv>

namespace stp {

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

std::size_t TokenSequence::literal_count() const {
    std::size_t n = 0;
    for (const auto& t : tokens) n += t.kind != Token::Kind::word;
    return n;
}

std::size_t word_id(std::string_view word, std::size_t vocab_size) {
    if (vocab_size == 0) throw std::invalid_argument("vocabulary size must be positive");
    return static_cast<std::size_t>(fnv1a64(word) % vocab_size);
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string normalize_word(std::string_view w) {
    std::size_t b = 0, e = w.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
    std::string out(w.substr(b, e - b));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

double parse_number(std::string_view text, std::size_t offset) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty()) {
        throw ParseError("non-numeric literal '" + std::string(text) + "'", offset);
    }
    return v;
}

}  // namespace

TokenSequence parse_instruction(std::string_view text, std::size_t vocab_size) {
    TokenSequence seq;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_space(text[i])) {
            ++i;
            continue;
        }
        if (text[i] == '<') {
            const std::size_t open = i;
            const std::size_t close = text.find('>', open);
            const std::size_t next_open = text.find('<', open + 1);
            if (close == std::string_view::npos || (next_open != std::string_view::npos && next_open < close)) {
                throw ParseError("unclosed marker", open);
            }
            // Split the marker body into fields with their offsets.
            std::vector<std::pair<std::string_view, std::size_t>> fields;
            std::size_t j = open + 1;
            while (j < close) {
                while (j < close && is_space(text[j])) ++j;
                const std::size_t s = j;
                while (j < close && !is_space(text[j])) ++j;
                if (j > s) fields.emplace_back(text.substr(s, j - s), s);
            }
            if (fields.empty()) throw ParseError("empty marker", open);
            Token tok;
            const std::string_view kind = fields[0].first;
            if (kind == "loc") {
                if (fields.size() != 4) {
                    throw ParseError("<loc> expects 3 numbers, got " + std::to_string(fields.size() - 1), open);
                }
                tok.kind = Token::Kind::position;
                for (int k = 0; k < 3; ++k) {
                    tok.xyz[k] = parse_number(fields[k + 1].first, fields[k + 1].second);
                    if (!(tok.xyz[k] >= -1.0 && tok.xyz[k] <= 1.0)) {
                        throw ParseError("position literal outside [-1, 1]", fields[k + 1].second);
                    }
                }
            } else if (kind == "time") {
                if (fields.size() != 2) {
                    throw ParseError("<time> expects 1 number, got " + std::to_string(fields.size() - 1), open);
                }
                tok.kind = Token::Kind::time;
                tok.t = parse_number(fields[1].first, fields[1].second);
                if (!(tok.t >= 0.0 && tok.t <= 1.0)) throw ParseError("time literal outside [0, 1]", fields[1].second);
            } else {
                throw ParseError("unknown marker '" + std::string(kind) + "'", open);
            }
            seq.tokens.push_back(tok);
            i = close + 1;
            continue;
        }
        const std::size_t s = i;
        while (i < text.size() && !is_space(text[i]) && text[i] != '<') ++i;
        if (text.substr(s, i - s).find('>') != std::string_view::npos) {
            throw ParseError("stray '>'", s + text.substr(s, i - s).find('>'));
        }
        std::string w = normalize_word(text.substr(s, i - s));
        if (w.empty()) continue;
        Token tok;
        tok.id = word_id(w, vocab_size);
        tok.text = std::move(w);
        seq.tokens.push_back(std::move(tok));
    }
    return seq;
}

std::string render(const TokenSequence& seq) {
    std::string out;
    for (const auto& t : seq.tokens) {
        if (!out.empty()) out += ' ';
        switch (t.kind) {
            case Token::Kind::word: out += t.text; break;
            case Token::Kind::position:
                out += "<loc " + exact_decimal(t.xyz[0]) + " " + exact_decimal(t.xyz[1]) + " " +
                       exact_decimal(t.xyz[2]) + ">";
                break;
            case Token::Kind::time: out += "<time " + exact_decimal(t.t) + ">"; break;
        }
    }
    return out;
}

TokenSequence strip_literals(const TokenSequence& seq) {
    TokenSequence out;
    for (const auto& t : seq.tokens)
        if (t.kind == Token::Kind::word) out.tokens.push_back(t);
    return out;
}

const char* to_string(TextCoordMode m) {
    switch (m) {
        case TextCoordMode::none: return "none";
        case TextCoordMode::raw: return "raw";
        case TextCoordMode::encoded: return "encoded";
    }
    return "encoded";
}

TextCoordMode text_coord_from_string(const std::string& name) {
    if (name == "none") return TextCoordMode::none;
    if (name == "raw") return TextCoordMode::raw;
    if (name == "encoded") return TextCoordMode::encoded;
    throw std::invalid_argument("unknown text-coord mode: " + name);
}

void add_language_params(ParamStore& store, std::size_t vocab_size, std::size_t d, std::size_t d_l,
                         bool tie_scales, Rng& rng) {
    Rng rt = rng.split("lang.table");
    Rng rp = rng.split("lang.placeholder");
    store.add("lang.table", random_normal(vocab_size, d_l, 0.5, rt));
    store.add("lang.placeholder", random_normal(1, d_l, 0.5, rp));
    const std::size_t sw = tie_scales ? 1 : d_l;
    store.add("lang.ws", Matrix(1, sw, 1.0));
    store.add("lang.wt", Matrix(1, sw, 1.0));
    add_linear(store, "lang.align", d, d_l, rng, false);
    add_linear(store, "lang.raw_pos", 3, d_l, rng, false);
    add_linear(store, "lang.raw_time", 1, d_l, rng, false);
}

Matrix text_position_features(const FourierEncoder& enc, const Matrix& xyz) { return encode_position(enc, xyz); }

Matrix text_time_features(const FourierEncoder& enc, const Matrix& t) { return fourier_features(t, enc.time); }

namespace {

double scale_at(const Matrix& w, std::size_t c) { return w.cols() == 1 ? w(0, 0) : w(0, c); }

}  // namespace

Matrix embed_sequence(const TokenSequence& input, const ParamStore& store, TextCoordMode mode,
                      LanguageCache* cache) {
    const TokenSequence seq = mode == TextCoordMode::none ? strip_literals(input) : input;
    const Matrix& table = store.get("lang.table");
    const Matrix& placeholder = store.get("lang.placeholder");
    const std::size_t d_l = table.cols();

    std::vector<std::size_t> pos_rows, time_rows;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.tokens[i].kind == Token::Kind::position) pos_rows.push_back(i);
        if (seq.tokens[i].kind == Token::Kind::time) time_rows.push_back(i);
    }
    Matrix pos_in(pos_rows.size(), 3), time_in(time_rows.size(), 1);
    for (std::size_t k = 0; k < pos_rows.size(); ++k)
        for (int c = 0; c < 3; ++c) pos_in(k, c) = seq.tokens[pos_rows[k]].xyz[c];
    for (std::size_t k = 0; k < time_rows.size(); ++k) time_in(k, 0) = seq.tokens[time_rows[k]].t;

    Matrix pos_enc, time_enc, tau_s, tau_t;
    if (mode == TextCoordMode::encoded) {
        const FourierEncoder enc = FourierEncoder::from_store(store);
        pos_enc = text_position_features(enc, pos_in);
        time_enc = text_time_features(enc, time_in);
        tau_s = linear_forward(store, "lang.align", pos_enc);
        tau_t = linear_forward(store, "lang.align", time_enc);
    } else if (mode == TextCoordMode::raw) {
        pos_enc = pos_in;
        time_enc = time_in;
        tau_s = linear_forward(store, "lang.raw_pos", pos_in);
        tau_t = linear_forward(store, "lang.raw_time", time_in);
    }

    Matrix out(seq.size(), d_l);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto src = seq.tokens[i].kind == Token::Kind::word ? table.row(seq.tokens[i].id) : placeholder.row(0);
        if (src.size() != d_l) throw DimensionError("embed_sequence: table width mismatch");
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    const Matrix& ws = store.get("lang.ws");
    const Matrix& wt = store.get("lang.wt");
    for (std::size_t k = 0; k < pos_rows.size(); ++k)
        for (std::size_t c = 0; c < d_l; ++c) out(pos_rows[k], c) += scale_at(ws, c) * tau_s(k, c);
    for (std::size_t k = 0; k < time_rows.size(); ++k)
        for (std::size_t c = 0; c < d_l; ++c) out(time_rows[k], c) += scale_at(wt, c) * tau_t(k, c);

    if (cache) {
        cache->mode = mode;
        cache->seq = seq;
        cache->pos_rows = std::move(pos_rows);
        cache->time_rows = std::move(time_rows);
        cache->pos_in = std::move(pos_in);
        cache->time_in = std::move(time_in);
        cache->pos_enc = std::move(pos_enc);
        cache->time_enc = std::move(time_enc);
        cache->tau_s = std::move(tau_s);
        cache->tau_t = std::move(tau_t);
    }
    return out;
}

namespace {

/// Gradient of Σ rows(scale ⊙ τ) with respect to the scale and τ.
Matrix scaled_rows_backward(ParamStore& store, const std::string& scale_name, const std::vector<std::size_t>& rows,
                            const Matrix& tau, const Matrix& dembed) {
    const Matrix& w = store.get(scale_name);
    Matrix dtau(rows.size(), dembed.cols());
    Matrix dw(1, w.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t c = 0; c < dembed.cols(); ++c) {
            const double g = dembed(rows[k], c);
            dtau(k, c) = scale_at(w, c) * g;
            dw(0, w.cols() == 1 ? 0 : c) += tau(k, c) * g;
        }
    }
    accumulate_grad(store, scale_name, dw);
    return dtau;
}

}  // namespace

void embed_sequence_backward(ParamStore& store, const LanguageCache& c, const Matrix& dembed) {
    if (dembed.rows() != c.seq.size()) throw DimensionError("embed_sequence_backward: row mismatch");
    const std::size_t d_l = dembed.cols();
    if (!store.is_frozen("lang.table") || !store.is_frozen("lang.placeholder")) {
        Matrix dtable(store.get("lang.table").rows(), d_l);
        Matrix dplace(1, d_l);
        for (std::size_t i = 0; i < c.seq.size(); ++i) {
            const bool word = c.seq.tokens[i].kind == Token::Kind::word;
            auto dst = word ? dtable.row(c.seq.tokens[i].id) : dplace.row(0);
            for (std::size_t k = 0; k < d_l; ++k) dst[k] += dembed(i, k);
        }
        accumulate_grad(store, "lang.table", dtable);
        accumulate_grad(store, "lang.placeholder", dplace);
    }
    if (c.mode == TextCoordMode::none) return;

    const Matrix dtau_s = scaled_rows_backward(store, "lang.ws", c.pos_rows, c.tau_s, dembed);
    const Matrix dtau_t = scaled_rows_backward(store, "lang.wt", c.time_rows, c.tau_t, dembed);
    if (c.mode == TextCoordMode::raw) {
        linear_backward(store, "lang.raw_pos", c.pos_in, dtau_s, false);
        linear_backward(store, "lang.raw_time", c.time_in, dtau_t, false);
        return;
    }
    const bool fourier = trainable(store, "fourier.pos") || trainable(store, "fourier.time");
    const Matrix dpe = linear_backward(store, "lang.align", c.pos_enc, dtau_s, fourier);
    const Matrix dte = linear_backward(store, "lang.align", c.time_enc, dtau_t, fourier);
    if (!fourier) return;
    if (c.pos_in.rows() > 0) {
        accumulate_grad(store, "fourier.pos", fourier_features_backward(c.pos_in, store.get("fourier.pos"), dpe).dw);
    }
    if (c.time_in.rows() > 0) {
        accumulate_grad(store, "fourier.time",
                        fourier_features_backward(c.time_in, store.get("fourier.time"), dte).dw);
    }
}

}  // namespace stp
