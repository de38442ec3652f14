/* Copyright 2026 The attkws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "attkws/errors.hpp"

namespace attkws {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major n-d array. Plain value type; gradients live on the Tape.
template <class Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel(shape)) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) {
    const int64_t n = numel(s);
    return Tensor(std::move(s), std::vector<Real>(static_cast<size_t>(n), Real(0)));
  }

  static Tensor full(Shape s, Real v) {
    const int64_t n = numel(s);
    return Tensor(std::move(s), std::vector<Real>(static_cast<size_t>(n), v));
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data.size()); }

  Real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  Real& at2(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
  Real at2(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }

  Real& at3(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  Real at3(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <class Real>
inline bool has_nan(const Tensor<Real>& t) {
  for (Real v : t.data) {
    if (std::isnan(v)) return true;
  }
  return false;
}

template <class Real>
inline void check_shape(const Tensor<Real>& t, const Shape& want, const char* who) {
  if (t.shape != want) {
    throw ShapeError(std::string(who) + ": expected " + shape_str(want) + ", got " +
                     shape_str(t.shape));
  }
}

}  // namespace attkws
