#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stprompt/encoding.hpp"
#include "stprompt/geometry.hpp"

namespace stp {

class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

  private:
    std::size_t offset_;
};

inline constexpr std::size_t kDefaultVocab = 256;

struct Token {
    enum class Kind { word, position, time };
    Kind kind = Kind::word;
    std::string text;  // lowercased word; empty for literals
    std::size_t id = 0;
    Vec3 xyz{0.0, 0.0, 0.0};
    double t = 0.0;

    friend bool operator==(const Token&, const Token&) = default;
};

struct TokenSequence {
    std::vector<Token> tokens;

    std::size_t size() const { return tokens.size(); }
    std::size_t literal_count() const;
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// FNV-1a of the word modulo the vocabulary size.
std::size_t word_id(std::string_view word, std::size_t vocab_size = kDefaultVocab);

/// Whitespace-split words (lowercased, edge punctuation stripped) plus
/// `<loc x y z>` and `<time t>` literals. Literals must already be normalized:
/// positions in [-1, 1]³, times in [0, 1].
TokenSequence parse_instruction(std::string_view text, std::size_t vocab_size = kDefaultVocab);

/// Text that parses back to the same sequence.
std::string render(const TokenSequence& seq);

/// Drops every coordinate and time literal.
TokenSequence strip_literals(const TokenSequence& seq);

enum class TextCoordMode { none, raw, encoded };
const char* to_string(TextCoordMode m);
TextCoordMode text_coord_from_string(const std::string& name);

/// Parameters: "lang.table" (vocab×d_l), "lang.placeholder" (1×d_l),
/// "lang.ws"/"lang.wt" (1×d_l, or 1×1 when tied), "lang.align" (d×d_l),
/// "lang.raw_pos" (3×d_l), "lang.raw_time" (1×d_l).
void add_language_params(ParamStore& store, std::size_t vocab_size, std::size_t d, std::size_t d_l,
                         bool tie_scales, Rng& rng);

/// Language-side Fourier features of literals: PE of positions and TE with
/// modulation factor 1, using the shared "fourier.*" parameters.
Matrix text_position_features(const FourierEncoder& enc, const Matrix& xyz);
Matrix text_time_features(const FourierEncoder& enc, const Matrix& t);

struct LanguageCache {
    TextCoordMode mode = TextCoordMode::encoded;
    TokenSequence seq;
    std::vector<std::size_t> pos_rows, time_rows;
    Matrix pos_in, time_in;    // k×3, k×1
    Matrix pos_enc, time_enc;  // encoded features or raw inputs
    Matrix tau_s, tau_t;       // k×d_l
};

/// Word rows come from the table; literal rows are
/// placeholder + w_s ⊙ τ_s (positions) or placeholder + w_t ⊙ τ_t (times).
/// Mode `none` drops literals before embedding.
Matrix embed_sequence(const TokenSequence& seq, const ParamStore& store, TextCoordMode mode,
                      LanguageCache* cache = nullptr);
void embed_sequence_backward(ParamStore& store, const LanguageCache& cache, const Matrix& dembed);

}  // namespace stp
