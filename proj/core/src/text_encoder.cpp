#include "tdet/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace tdet {

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab({"<ENC>", "<UNK>", "<PAD>", "the", "all", "red", "green", "blue",
                                 "circle", "circles", "square", "squares", "triangle",
                                 "triangles", "shape", "shapes"});
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[kEnc] != "<ENC>" || tokens_[kUnk] != "<UNK>" ||
      tokens_[kPad] != "<PAD>") {
    throw std::invalid_argument("vocabulary must start with <ENC>, <UNK>, <PAD>");
  }
}

std::size_t Vocabulary::id(std::string_view word) const {
  std::string lower(word);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::size_t i = 3; i < tokens_.size(); ++i) {
    if (tokens_[i] == lower) return i;
  }
  return kUnk;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kEnc);
  std::istringstream in{std::string(text)};
  for (std::string word; seq.ids.size() < max_len && in >> word;) seq.ids.push_back(vocab.id(word));
  return seq;
}

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> table(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      table[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

}  // namespace tdet
