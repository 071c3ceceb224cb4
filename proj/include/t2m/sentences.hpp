#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace t2m {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// Splits on '.', trims each piece, drops empty pieces. Text without any
// period comes back as a single sentence.
inline std::vector<std::string> split_sentences(std::string_view description) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= description.size()) {
    auto stop = description.find('.', start);
    if (stop == std::string_view::npos) stop = description.size();
    const auto piece = trim(description.substr(start, stop - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = stop + 1;
  }
  return out;
}

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace t2m
