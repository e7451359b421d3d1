// Copyright 2026 The PMP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pmp/tensor.hpp"

namespace pmp {

struct VocabEntry {
  std::string token;
  bool compound = false;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Tokens must be unique, lowercase and non-empty (ConfigError otherwise).
  explicit Vocabulary(std::vector<VocabEntry> entries);

  std::size_t size() const { return entries_.size(); }
  const std::string& token(std::size_t i) const { return entries_[i].token; }
  bool is_compound(std::size_t i) const { return entries_[i].compound; }
  bool contains(std::string_view token) const;
  // LookupError for unknown tokens.
  std::size_t index(std::string_view token) const;
  const std::vector<VocabEntry>& entries() const { return entries_; }

 private:
  std::vector<VocabEntry> entries_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// V x N_c matrix of unit rows. Rows can be edited until freeze().
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(Tensor rows);

  std::size_t size() const { return rows_.rows(); }
  std::size_t dim() const { return rows_.cols(); }
  std::span<const double> row(std::size_t i) const;
  const Tensor& matrix() const { return rows_; }
  void set_row(std::size_t i, std::span<const double> values);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  Tensor rows_;
  bool frozen_ = false;
};

// A compound token whose embedding is derived from other tokens. A part that
// is not a vocabulary token contributes a fixed seeded direction of its own.
struct Composition {
  std::string token;
  std::vector<std::string> parts;
};

struct TextBank {
  Vocabulary vocab;
  EmbeddingTable table;

  std::span<const double> embedding(std::string_view token) const {
    return table.row(vocab.index(token));
  }
};

// Rows are drawn N(0,1) from `seed`, l2-normalized and frozen. For each
// composition the row becomes normalize(sum(part rows) + blend * own row)
// before freezing.
TextBank build_vocab(const std::vector<VocabEntry>& entries, std::size_t dim,
                     std::uint64_t seed,
                     std::span<const Composition> compositions = {},
                     double blend = 0.5);

// M x N_c embeddings with their source strings.
struct TextTokens {
  Tensor embeddings;
  std::vector<std::string> tokens;

  std::size_t count() const { return tokens.size(); }
};

// Lowercase, split on non-alphanumerics, drop stopwords and unknown words,
// keep first occurrences. Unknown words are reported through `warnings`.
std::vector<std::string> tokenize_prompt(
    std::string_view text, const Vocabulary& vocab,
    const std::set<std::string>& stopwords,
    std::vector<std::string>* warnings = nullptr);

TextTokens embed_prompt(std::span<const std::string> tokens,
                        const TextBank& bank);
Tensor class_embedding_matrix(std::span<const std::string> classes,
                              const TextBank& bank);

// "token" or "token compound" per line; blank lines and '#' comments skipped.
std::vector<VocabEntry> read_vocab_file(const std::filesystem::path& path);
std::set<std::string> read_stopword_file(const std::filesystem::path& path);
const std::set<std::string>& default_stopwords();

}  // namespace pmp
