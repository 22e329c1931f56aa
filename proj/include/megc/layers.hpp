#pragma once

#include "megc/ops.hpp"
#include "megc/rng.hpp"
#include "megc/tape.hpp"

#include <string>
#include <vector>

namespace megc {

/// Pointwise-conv weight from a symmetric uniform scaled by 1/sqrt(fan_in).
Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng);

/// Channel width of the FGB reduction: C_in/r when divisible. Raw-coordinate
/// entry layers (3 xyz channels, or 6 when two entities are merged) use a
/// fixed width of 8 as in the ST-GCN lineage; any other non-divisible count
/// is a config error.
int fgb_hidden_channels(int c_in, int r);

/// Feature generation block: two channel-reducing pointwise convolutions,
/// shared across entities.
struct FgbParams {
    int in_channels = 0;
    int hidden = 0;
    int reduction = 0;
    Param psi_w, psi_b, phi_w, phi_b;

    FgbParams(const std::string& prefix, int c_in, int r, Rng& rng);
};

/// Feature fusion block: out = intra + beta * inter with learnable beta.
struct FfbParams {
    Param beta;  // scalar; excluded from weight decay

    FfbParams(const std::string& prefix, double init = 0.0);
};

struct MteParams {
    FgbParams fgb;
    FfbParams ffb;
    Param xi_w, xi_b;  // hidden -> C_out lift of the correlation map
    Param alpha;       // scalar gate on the static prior; excluded from decay
    Tensor a_static;   // [1,N,N]
    bool mutual = true;

    MteParams(const std::string& prefix, int c_in, int c_out, int r, const Tensor& a_static_,
              Rng& rng);
};

struct MfeParams {
    int out_channels = 0;
    Param w, b;  // C_in -> C_out pointwise conv, shared across entities
    FfbParams ffb;
    bool mutual = true;

    MfeParams(const std::string& prefix, int c_in, int c_out, Rng& rng);
};

struct TcBranchParams {
    Param w, b;
    int kernel = 5;
    int dilation = 1;
};

/// Values recorded during a traced forward, for the tanh-range property and
/// the per-joint activation scores.
struct MteTrace {
    std::vector<Tensor> v_intra;        // correlation map per entity
    Tensor v_inter;                     // cross-entity correlation map
    std::vector<Tensor> adj_pre_ffb;    // adjacency with the beta path removed
    std::vector<Tensor> adj_post_ffb;   // adjacency as used by the layer
    bool filled = false;
};

/// One me-GC layer: MTE + MFE + graph contraction + temporal convolution
/// block with residual. With both mutual flags off this computes the
/// split-and-fusion baseline GC (late fusion); with tc disabled as well it
/// is the plain baseline.
struct MeGcLayer {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    MteParams mte;
    MfeParams mfe;
    std::vector<TcBranchParams> tc;
    bool tc_enabled = true;
    bool residual_enabled = true;
    bool has_projection = false;
    Param proj_w, proj_b;

    MeGcLayer(const std::string& prefix, int c_in, int c_out, int stride_, int r,
              const Tensor& a_static, bool residual, Rng& rng);
    MeGcLayer(const MeGcLayer&) = delete;
    MeGcLayer& operator=(const MeGcLayer&) = delete;

    /// Appends the parameters that participate in this layer's forward.
    void collect_params(std::vector<Param*>& out);
};

/// Intra-entity correlation map V = tanh(pool(psi(R))_i - pool(phi(R))_j).
Value fgb_intra(Value r, FgbParams& p);

/// Cross-entity correlation map from the averaged pooled features of the
/// two entities. Swapping the entities negates and transposes the map
/// (tanh of a difference), it does not leave it unchanged; with identical
/// entities the two per-entity outputs of the surrounding modules coincide.
Value fgb_inter(Value r, Value l, FgbParams& p);

Value ffb_fuse(Value intra, Value inter, FfbParams& p);

/// x:[E,C_k,T,N] -> per-entity channel-wise adjacency [E,C_{k+1},N,N].
Value mte_forward(Value x, MteParams& p, MteTrace* trace = nullptr);

/// x:[E,C_k,T,N] -> per-entity local features [E,C_{k+1},T,N].
Value mfe_forward(Value x, MfeParams& p);

/// Full layer: ReLU(tc(contract(mfe(x), mte(x))) + residual(x)).
Value layer_forward(Value x, MeGcLayer& layer, MteTrace* trace = nullptr);

}  // namespace megc
