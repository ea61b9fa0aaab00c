#pragma once

// Fused bidirectional LSTM (gate order i, f, g, o; one bias per gate row).

#include "tunein/tensor.hpp"

namespace tunein {

template <typename T>
struct LstmDirection {
  Tensor<T> w_ih;  // [4H, Din]
  Tensor<T> w_hh;  // [4H, H]
  Tensor<T> bias;  // [4H]
};

// x[B, T, Din] -> [B, T, 2H]; forward states in the first H channels.
template <typename T>
Tensor<T> bilstm(const Tensor<T>& x, const LstmDirection<T>& fwd, const LstmDirection<T>& bwd);

}  // namespace tunein
