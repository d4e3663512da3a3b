#pragma once

#include <string>
#include <vector>

#include "dapn/autodiff.hpp"
#include "dapn/rng.hpp"

namespace dapn::nn {

using ad::Mat;
using ad::Var;

struct NamedParam {
    std::string name;
    Var var;
};

struct ImageDims {
    int c = 0;
    int h = 0;
    int w = 0;
    int pixels() const { return c * h * w; }
};

/// 2-D convolution, stride 1, zero padding k/2 (spatial size preserved).
/// Batch rows hold CHW-flattened images; w is [cout, cin*k*k], b is [1, cout].
Var conv2d(const Var& x, const Var& w, const Var& b, ImageDims in, int cout, int k);

/// 2x2 max pooling with stride 2; trailing odd row/column is dropped.
Var maxpool2(const Var& x, ImageDims in);

inline ImageDims pooled_dims(ImageDims in) { return {in.c, in.h / 2, in.w / 2}; }

struct Linear {
    Var W;  // [in, out]
    Var b;  // [1, out]

    Linear() = default;
    Linear(int in, int out, Rng& rng, double w_std);

    static Linear he(int in, int out, Rng& rng);
    static Linear glorot(int in, int out, Rng& rng);

    Var forward(const Var& x) const { return ad::add_rowvec(ad::matmul(x, W), b); }
    int in_dim() const { return static_cast<int>(W.rows()); }
    int out_dim() const { return static_cast<int>(W.cols()); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Conv2d {
    Var W;  // [cout, cin*k*k]
    Var b;  // [1, cout]
    int cin = 0, cout = 0, k = 0;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, Rng& rng);

    Var forward(const Var& x, ImageDims in) const { return conv2d(x, W, b, in, cout, k); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct SgdGroup {
    std::vector<Var> params;
    double weight_decay = 0.0;
};

/// SGD with momentum: v <- mu*v + (g + wd*theta); theta <- theta - lr*v.
class SgdMomentum {
public:
    SgdMomentum(std::vector<SgdGroup> groups, double momentum);

    void step(double lr);
    void zero_grad();

private:
    struct Slot {
        Var p;
        double wd;
        Mat vel;
    };
    std::vector<Slot> slots_;
    double momentum_;
};

}  // namespace dapn::nn
