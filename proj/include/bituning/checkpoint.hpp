/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Plain-text checkpoint of a ModelParams.
//
//   bituning-checkpoint 1
//   input <n>
//   hidden <w1> <w2> ...        (may be empty)
//   feature <d>
//   classes <C>
//   projection <L>
//   classifier_bias <0|1>
//   tensor <name> <rows> <cols>
//   <rows*cols values, row-major, %.17g, whitespace separated>
//   ... one tensor block per parameter, in parameters() order ...
//   end
//
// %.17g round-trips every double exactly. Key pools are not stored; they are
// rebuilt by the warm-up pass on resume.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "bituning/model.hpp"

namespace bituning {

inline constexpr const char* kCheckpointMagic = "bituning-checkpoint";

inline void write_checkpoint(std::ostream& os, const ModelParams& params) {
  const ModelDims& d = params.dims;
  os << kCheckpointMagic << " 1\n";
  os << "input " << d.input << "\nhidden";
  for (std::size_t h : d.hidden) os << ' ' << h;
  os << "\nfeature " << d.feature << "\nclasses " << d.classes << "\nprojection " << d.projection
     << "\nclassifier_bias " << (d.classifier_bias ? 1 : 0) << '\n';
  char buf[40];
  for (const auto& ref : parameters(params)) {
    const Tensor& t = *ref.tensor;
    os << "tensor " << ref.name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t.values()[i]);
      os << buf << ((i + 1) % t.cols() == 0 ? '\n' : ' ');
    }
  }
  os << "end\n";
}

inline ModelParams read_checkpoint(std::istream& is) {
  auto fail = [](const std::string& what) -> ConfigError { return ConfigError("checkpoint: " + what); };
  std::string line, word;
  auto next_line = [&](const char* expect) {
    if (!std::getline(is, line)) throw fail(std::string("truncated before '") + expect + "'");
    std::istringstream ls(line);
    ls >> word;
    if (word != expect) throw fail("expected '" + std::string(expect) + "', found '" + word + "'");
    return ls;
  };
  auto read_size = [&](const char* key) {
    auto ls = next_line(key);
    std::size_t v = 0;
    if (!(ls >> v)) throw fail(std::string("bad value for ") + key);
    return v;
  };

  {
    auto ls = next_line(kCheckpointMagic);
    int version = 0;
    if (!(ls >> version) || version != 1) throw fail("unsupported version");
  }
  ModelDims dims;
  dims.input = read_size("input");
  {
    auto ls = next_line("hidden");
    dims.hidden.clear();
    std::size_t h;
    while (ls >> h) dims.hidden.push_back(h);
  }
  dims.feature = read_size("feature");
  dims.classes = read_size("classes");
  dims.projection = read_size("projection");
  dims.classifier_bias = read_size("classifier_bias") != 0;
  validate(dims);

  // Shapes come from a freshly initialized model of the same dims.
  std::mt19937_64 unused(0);
  ModelParams params = init_params(dims, unused);
  for (auto& ref : parameters(params)) {
    auto ls = next_line("tensor");
    std::string name;
    std::size_t rows = 0, cols = 0;
    ls >> name >> rows >> cols;
    if (name != ref.name) throw fail("expected tensor " + ref.name + ", found " + name);
    if (rows != ref.tensor->rows() || cols != ref.tensor->cols()) throw fail("shape mismatch for " + name);
    std::vector<double> values(rows * cols);
    for (double& v : values) {
      std::string tok;
      if (!(is >> tok)) throw fail("truncated values for " + name);
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw fail("bad number '" + tok + "' in " + name);
      }
    }
    is >> std::ws;
    *ref.tensor = Tensor({rows, cols}, std::move(values), "checkpoint");
  }
  next_line("end");
  return params;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_checkpoint(os, params);
  if (!os) throw IoError("write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace bituning
