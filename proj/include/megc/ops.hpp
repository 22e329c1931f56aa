#pragma once

#include "megc/rng.hpp"
#include "megc/tape.hpp"
#include "megc/tensor.hpp"

#include <vector>

namespace megc {

// Differentiable tensor ops recorded on a Tape. Each returns a fresh node;
// inputs must live on the same tape.

// elementwise
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value scale(Value a, double c);
Value mul_scalar(Value a, Value s);  // s is scalar-shaped [1]
Value tanh_map(Value x);
Value relu_map(Value x);

// axis plumbing
Value slice_first(Value x, int index);
Value stack_first(const std::vector<Value>& xs);
Value subsample_time(Value x, int stride);  // [C,T,N] -> [C,ceil(T/s),N]

// reductions
Value mean_over_time(Value x);         // [C,T,N] -> [C,N]
Value global_mean_time_joints(Value x);  // [C,T,N] -> [C]
Value sum_first(Value x);              // [E,rest] -> [rest]

/// out[c,i,j] = x[c,i] - y[c,j]; the difference grid behind the tanh
/// correlation maps.
Value pairwise_diff(Value x, Value y);  // [C,N],[C,N] -> [C,N,N]

// linear maps
Value pointwise_conv(Value x, Value w, Value b);  // [Ci,D1,D2],[Co,Ci],[Co] -> [Co,D1,D2]
Value affine(Value x, Value w, Value b);          // [Ci],[K,Ci],[K] -> [K]

/// One dilated 1-D convolution along the frame axis, applied independently
/// per joint, with symmetric zero padding floor(dilation*(k-1)/2) and the
/// given stride. x:[C,T,N], w:[Co,C,k], b:[Co] -> [Co,T',N].
Value temporal_conv_branch(Value x, Value w, Value b, int dilation, int stride);

/// Output frame count of a branch; throws when the padded input is shorter
/// than the kernel span.
int temporal_conv_out_extent(int t, int kernel, int dilation, int stride);

struct TcBranchRef {
    Value w;  // [Co,C,k]
    Value b;  // [Co]
    int dilation = 1;
    int stride = 1;
};

/// Sum of branch convolutions; all branches must agree on the output frame
/// extent.
Value temporal_conv(Value x, const std::vector<TcBranchRef>& branches);

/// einsum 'abcd,abde->abce': fuses per-joint features through per-channel
/// adjacency. f:[E,C,T,N], a:[E,C,N,N] -> [E,C,T,N].
Value contract_graph(Value f, Value a);

/// out[c,i,j] = x[c,i,j] + alpha * a_static[0,i,j]; the static skeleton
/// prior repeated across channels. a_static is not a tape input.
Value broadcast_add_static(Value x, const Tensor& a_static, Value alpha);

/// Running statistics owned by the model's input layer.
struct NormStats {
    Tensor running_mean;  // [C,N]
    Tensor running_var;   // [C,N]
    bool initialized = false;
};

/// Standardizes along the temporal axis per (channel, joint) slot: batch
/// statistics over (batch, entity, frame) in training mode, frozen running
/// statistics in eval mode. x:[B,E,C,T,N], gamma/beta:[C,N].
Value temporal_batch_norm(Value x, Value gamma, Value beta, NormStats& stats, bool training,
                          double eps = 1e-5, double momentum = 0.1);

/// Inverted dropout with a stored mask; identity in eval mode or at rate 0.
Value dropout(Value x, double rate, bool training, Rng& rng);

/// Mean softmax cross-entropy over the batch. logits:[B,K].
Value softmax_cross_entropy(Value logits, const std::vector<int>& labels);

}  // namespace megc
