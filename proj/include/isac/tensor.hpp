#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include "isac/common.hpp"

namespace isac {

/// Dense complex cube indexed [antenna][subcarrier][symbol].
/// Used for both communication channels and sensing echoes.
class CxTensor {
 public:
  CxTensor() = default;
  CxTensor(int n_ant, int n_sc, int n_sym)
      : n_ant_(n_ant), n_sc_(n_sc), n_sym_(n_sym),
        data_(static_cast<std::size_t>(n_ant) * n_sc * n_sym, cplx{0.0, 0.0}) {
    if (n_ant <= 0 || n_sc <= 0 || n_sym <= 0)
      throw std::invalid_argument("CxTensor: all dimensions must be positive");
  }

  int n_antennas() const { return n_ant_; }
  int n_subcarriers() const { return n_sc_; }
  int n_symbols() const { return n_sym_; }
  std::size_t size() const { return data_.size(); }

  cplx& operator()(int a, int k, int m) {
    return data_[(static_cast<std::size_t>(a) * n_sc_ + k) * n_sym_ + m];
  }
  const cplx& operator()(int a, int k, int m) const {
    return data_[(static_cast<std::size_t>(a) * n_sc_ + k) * n_sym_ + m];
  }

  const std::vector<cplx>& data() const { return data_; }
  std::vector<cplx>& data() { return data_; }

  bool same_shape(const CxTensor& o) const {
    return n_ant_ == o.n_ant_ && n_sc_ == o.n_sc_ && n_sym_ == o.n_sym_;
  }

  double total_power() const {
    double p = 0.0;
    for (const cplx& v : data_) p += std::norm(v);
    return p;
  }

  bool all_finite() const {
    for (const cplx& v : data_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

  CxTensor& operator+=(const CxTensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("CxTensor: shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  CxTensor& operator-=(const CxTensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("CxTensor: shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

 private:
  int n_ant_ = 0, n_sc_ = 0, n_sym_ = 0;
  std::vector<cplx> data_;
};

using ChannelTensor = CxTensor;
using EchoTensor = CxTensor;

}  // namespace isac
