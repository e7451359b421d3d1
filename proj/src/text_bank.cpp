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

#include "pmp/text_bank.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pmp/errors.hpp"
#include "pmp/rng.hpp"

namespace pmp {

Vocabulary::Vocabulary(std::vector<VocabEntry> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw ConfigError("vocabulary is empty");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const std::string& t = entries_[i].token;
    if (t.empty()) throw ConfigError("empty vocabulary token");
    for (char ch : t) {
      if (std::tolower(static_cast<unsigned char>(ch)) != ch) {
        throw ConfigError("vocabulary token '" + t + "' is not lowercase");
      }
    }
    if (!lookup_.emplace(t, i).second) {
      throw ConfigError("duplicate vocabulary token '" + t + "'");
    }
  }
}

bool Vocabulary::contains(std::string_view token) const {
  return lookup_.count(std::string(token)) != 0;
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) {
    throw LookupError("unknown token '" + std::string(token) + "'");
  }
  return it->second;
}

EmbeddingTable::EmbeddingTable(Tensor rows) : rows_(std::move(rows)) {
  if (rows_.rank() != 2) throw DimensionError("embedding table must be a matrix");
}

std::span<const double> EmbeddingTable::row(std::size_t i) const {
  return rows_.data().subspan(i * dim(), dim());
}

void EmbeddingTable::set_row(std::size_t i, std::span<const double> values) {
  if (frozen_) throw ContractError("embedding table is frozen");
  if (values.size() != dim()) throw DimensionError("embedding row width");
  std::copy(values.begin(), values.end(), rows_.data().begin() + i * dim());
}

namespace {

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
}

std::vector<double> seeded_direction(std::uint64_t seed, std::string_view name,
                                     std::size_t dim) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : name) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  Rng rng(mix_seed(seed, h));
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  normalize(v);
  return v;
}

}  // namespace

TextBank build_vocab(const std::vector<VocabEntry>& entries, std::size_t dim,
                     std::uint64_t seed,
                     std::span<const Composition> compositions, double blend) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  TextBank bank{Vocabulary(entries), EmbeddingTable(Tensor({entries.size(), dim}))};
  Rng rng(seed);
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (double& x : row) x = rng.normal();
    normalize(row);
    bank.table.set_row(i, row);
  }
  for (const Composition& comp : compositions) {
    const std::size_t target = bank.vocab.index(comp.token);
    const auto own = bank.table.row(target);
    std::vector<double> acc(own.begin(), own.end());
    for (double& x : acc) x *= blend;
    for (const std::string& part : comp.parts) {
      std::vector<double> dir;
      if (bank.vocab.contains(part)) {
        const auto r = bank.table.row(bank.vocab.index(part));
        dir.assign(r.begin(), r.end());
      } else {
        dir = seeded_direction(seed, part, dim);
      }
      for (std::size_t j = 0; j < dim; ++j) acc[j] += dir[j];
    }
    normalize(acc);
    bank.table.set_row(target, acc);
  }
  bank.table.freeze();
  return bank;
}

std::vector<std::string> tokenize_prompt(std::string_view text,
                                         const Vocabulary& vocab,
                                         const std::set<std::string>& stopwords,
                                         std::vector<std::string>* warnings) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (stopwords.count(word) == 0 && seen.count(word) == 0) {
      if (vocab.contains(word)) {
        seen.insert(word);
        out.push_back(word);
      } else if (warnings != nullptr) {
        warnings->push_back("skipping out-of-vocabulary word '" + word + "'");
      }
    }
    word.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      word.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

TextTokens embed_prompt(std::span<const std::string> tokens,
                        const TextBank& bank) {
  const std::size_t dim = bank.table.dim();
  TextTokens out{Tensor({tokens.size(), dim}), {}};
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto row = bank.embedding(tokens[j]);
    std::copy(row.begin(), row.end(), out.embeddings.data().begin() + j * dim);
    out.tokens.push_back(tokens[j]);
  }
  return out;
}

Tensor class_embedding_matrix(std::span<const std::string> classes,
                              const TextBank& bank) {
  std::set<std::string> distinct(classes.begin(), classes.end());
  if (distinct.size() != classes.size()) {
    throw ContractError("class list contains duplicates");
  }
  return embed_prompt(classes, bank).embeddings;
}

std::vector<VocabEntry> read_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<VocabEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string token, flag, extra;
    if (!(fields >> token) || token[0] == '#') continue;
    VocabEntry e{token, false};
    if (fields >> flag) {
      if (flag != "compound" || (fields >> extra)) {
        throw ConfigError("bad vocabulary line: '" + line + "'");
      }
      e.compound = true;
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::set<std::string> read_stopword_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stopword file " + path.string());
  std::set<std::string> words;
  std::string w;
  while (in >> w) words.insert(w);
  return words;
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",  "an",   "and",  "the", "of",   "in",  "on",    "with", "at",
      "to", "is",   "are",  "this", "that", "its", "photo", "image", "picture",
      "or", "some", "there", "for", "by",   "from"};
  return words;
}

}  // namespace pmp
