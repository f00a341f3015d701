#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdet/config.hpp"
#include "tdet/layers.hpp"

namespace tdet {

class Vocabulary {
 public:
  static constexpr std::size_t kEnc = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kPad = 2;

  // <ENC>, <UNK>, <PAD>, then the query grammar words in a fixed order.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Case-insensitive; kUnk for unknown words.
  std::size_t id(std::string_view word) const;
  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
};

struct TokenSequence {
  std::vector<std::size_t> ids;  // ids[0] == Vocabulary::kEnc
};

// Lowercase, whitespace split, <ENC> prepended, truncated to max_len.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = 8);

// Fixed sin/cos table [length, dim].
std::vector<double> sinusoidal_positions(std::size_t length, std::size_t dim);

template <typename T>
struct AttentionParams {
  LinearLayer<T> query, key, value, output;

  static AttentionParams init(std::size_t d, std::mt19937_64& rng) {
    return {LinearLayer<T>::init(d, d, rng), LinearLayer<T>::init(d, d, rng),
            LinearLayer<T>::init(d, d, rng), LinearLayer<T>::init(d, d, rng)};
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
  }
};

// Unmasked scaled dot-product self-attention over x [L,d]. key_padding[j]
// true removes key j from every query's softmax. When weights_out is given it
// receives one [L,L] attention matrix per head.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionParams<T>& params,
                                    std::size_t heads,
                                    const std::vector<bool>* key_padding = nullptr,
                                    std::vector<BasicTensor<T>>* weights_out = nullptr) {
  if (x.rank() != 2) throw ShapeError("attention: expected x [L,d]");
  const std::size_t len = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: model dim " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const auto q = params.query(x);
  const auto k = params.key(x);
  const auto v = params.value(x);

  std::optional<BasicTensor<T>> mask;
  if (key_padding) {
    if (key_padding->size() != len) throw ShapeError("attention: padding mask length mismatch");
    std::vector<T> m(len * len, T(0));
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        if ((*key_padding)[j]) m[i * len + j] = T(-1e30);
      }
    }
    mask = BasicTensor<T>({len, len}, std::move(m));
  }

  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<BasicTensor<T>> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = slice_cols(q, h * dh, dh);
    const auto kh = slice_cols(k, h * dh, dh);
    const auto vh = slice_cols(v, h * dh, dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    const auto weights = softmax_lastdim(scores);
    if (weights_out) weights_out->push_back(weights);
    head_out.push_back(matmul(weights, vh));
  }
  return params.output(heads == 1 ? head_out[0] : concat_cols(head_out));
}

// Post-norm transformer encoder layer.
template <typename T>
struct EncoderLayer {
  AttentionParams<T> attention;
  LayerNormLayer<T> norm1;
  LinearLayer<T> ffn1, ffn2;
  LayerNormLayer<T> norm2;

  static EncoderLayer init(std::size_t d, std::size_t ffn_dim, std::mt19937_64& rng) {
    return {AttentionParams<T>::init(d, rng), LayerNormLayer<T>::init(d),
            LinearLayer<T>::init(d, ffn_dim, rng), LinearLayer<T>::init(ffn_dim, d, rng),
            LayerNormLayer<T>::init(d)};
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, std::size_t heads,
                         const std::vector<bool>* key_padding = nullptr) const {
    auto h = norm1(add(x, multi_head_attention(x, attention, heads, key_padding)));
    return norm2(add(h, ffn2(relu(ffn1(h)))));
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    attention.collect(prefix + ".attn", out);
    norm1.collect(prefix + ".norm1", out);
    ffn1.collect(prefix + ".ffn1", out);
    ffn2.collect(prefix + ".ffn2", out);
    norm2.collect(prefix + ".norm2", out);
  }
};

template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;

  static TextEncoder init(std::size_t vocab_size, const TextEncoderConfig& config,
                          std::mt19937_64& rng) {
    if (config.heads == 0 || config.embed_dim % config.heads != 0) {
      throw std::invalid_argument("text encoder: embed_dim must be divisible by heads");
    }
    TextEncoder e;
    e.config_ = config;
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> table(vocab_size * config.embed_dim);
    for (T& v : table) v = static_cast<T>(dist(rng));
    e.embedding_ = BasicTensor<T>({vocab_size, config.embed_dim}, std::move(table), true);
    for (std::size_t i = 0; i < config.layers; ++i) {
      e.layers_.push_back(EncoderLayer<T>::init(config.embed_dim, config.ffn_dim, rng));
    }
    return e;
  }

  // Final hidden states [L, d_t]. Positions with key_padding set are excluded
  // as attention keys.
  BasicTensor<T> hidden_states(const std::vector<std::size_t>& ids,
                               const std::vector<bool>* key_padding = nullptr) const {
    const std::size_t vocab = embedding_.dim(0), d = config_.embed_dim;
    if (ids.empty()) throw std::invalid_argument("text encoder: empty token sequence");
    for (std::size_t id : ids) {
      if (id >= vocab) {
        throw std::out_of_range("text encoder: token id " + std::to_string(id) +
                                " outside vocabulary of " + std::to_string(vocab));
      }
    }
    const auto pe = sinusoidal_positions(ids.size(), d);
    BasicTensor<T> pos({ids.size(), d}, std::vector<T>(pe.begin(), pe.end()));
    auto x = add(select_rows(embedding_, std::span<const std::size_t>(ids)), pos);
    for (const auto& layer : layers_) x = layer.forward(x, config_.heads, key_padding);
    return x;
  }

  // Unit-norm <ENC> state, shape [1, d_t].
  BasicTensor<T> encode(const TokenSequence& tokens) const {
    return encode_ids(tokens.ids, nullptr);
  }

  BasicTensor<T> encode_ids(const std::vector<std::size_t>& ids,
                            const std::vector<bool>* key_padding) const {
    const std::size_t enc_row[1] = {0};
    return l2_normalize(select_rows(hidden_states(ids, key_padding), std::span<const std::size_t>(enc_row)));
  }

  // ids padded with <PAD> to `padded_length`; pads masked out as keys.
  BasicTensor<T> encode_padded(const TokenSequence& tokens, std::size_t padded_length) const {
    std::vector<std::size_t> ids = tokens.ids;
    std::vector<bool> padding(ids.size(), false);
    while (ids.size() < padded_length) {
      ids.push_back(Vocabulary::kPad);
      padding.push_back(true);
    }
    return encode_ids(ids, &padding);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".embedding", embedding_, true});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
  }

  const TextEncoderConfig& config() const { return config_; }
  const std::vector<EncoderLayer<T>>& layers() const { return layers_; }

 private:
  TextEncoderConfig config_;
  BasicTensor<T> embedding_;
  std::vector<EncoderLayer<T>> layers_;
};

}  // namespace tdet
