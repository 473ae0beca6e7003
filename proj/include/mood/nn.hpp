#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "mood/autodiff.hpp"
#include "mood/errors.hpp"
#include "mood/rng.hpp"
#include "mood/tensor.hpp"

namespace mood {

// Named parameter blobs. `params` are trainable; `state` holds non-learned
// buffers (batch-norm running statistics).
struct ParamStore {
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> state;

    Tensor& param(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw ModelError("missing parameter: " + name);
        return it->second;
    }
    const Tensor& param(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ModelError("missing parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params.count(name) != 0; }

    Tensor& state_buf(const std::string& name) {
        auto it = state.find(name);
        if (it == state.end()) throw ModelError("missing state buffer: " + name);
        return it->second;
    }

    // Copy every entry of `src` under a new prefix (teacher absorption).
    void absorb(const ParamStore& src, const std::string& prefix) {
        for (const auto& [k, v] : src.params) params[prefix + k] = v;
        for (const auto& [k, v] : src.state) state[prefix + k] = v;
    }

    // Byte-level hash of all entries whose name starts with `prefix`.
    uint64_t checksum(const std::string& prefix = "") const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto feed = [&h](const std::string& name, const Tensor& v) {
            h = fnv1a(name, h);
            const char* bytes = reinterpret_cast<const char*>(v.data.data());
            h = fnv1a(std::string_view(bytes, v.data.size() * sizeof(double)), h);
        };
        for (const auto& [k, v] : params)
            if (k.rfind(prefix, 0) == 0) feed(k, v);
        for (const auto& [k, v] : state)
            if (k.rfind(prefix, 0) == 0) feed(k, v);
        return h;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write parameter blob: " + path);
        auto write_map = [&out](const std::map<std::string, Tensor>& m) {
            uint32_t n = uint32_t(m.size());
            out.write(reinterpret_cast<const char*>(&n), 4);
            for (const auto& [k, v] : m) {
                uint32_t len = uint32_t(k.size());
                out.write(reinterpret_cast<const char*>(&len), 4);
                out.write(k.data(), len);
                uint32_t rank = uint32_t(v.shape.size());
                out.write(reinterpret_cast<const char*>(&rank), 4);
                for (int d : v.shape) {
                    int32_t dd = d;
                    out.write(reinterpret_cast<const char*>(&dd), 4);
                }
                out.write(reinterpret_cast<const char*>(v.data.data()),
                          std::streamsize(v.data.size() * sizeof(double)));
            }
        };
        out.write("MOODPS01", 8);
        write_map(params);
        write_map(state);
    }

    static ParamStore load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read parameter blob: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "MOODPS01", 8) != 0)
            throw DataError("bad parameter blob header: " + path);
        auto read_map = [&in, &path](std::map<std::string, Tensor>& m) {
            uint32_t n = 0;
            in.read(reinterpret_cast<char*>(&n), 4);
            for (uint32_t i = 0; i < n; ++i) {
                uint32_t len = 0;
                in.read(reinterpret_cast<char*>(&len), 4);
                std::string name(len, '\0');
                in.read(name.data(), len);
                uint32_t rank = 0;
                in.read(reinterpret_cast<char*>(&rank), 4);
                std::vector<int> shape(rank);
                for (uint32_t d = 0; d < rank; ++d) {
                    int32_t dd = 0;
                    in.read(reinterpret_cast<char*>(&dd), 4);
                    shape[d] = dd;
                }
                Tensor v(shape);
                in.read(reinterpret_cast<char*>(v.data.data()),
                        std::streamsize(v.data.size() * sizeof(double)));
                if (!in) throw DataError("truncated parameter blob: " + path);
                m[name] = std::move(v);
            }
        };
        ParamStore ps;
        read_map(ps.params);
        read_map(ps.state);
        return ps;
    }
};

// Binds store parameters onto a tape as leaves, once per name per pass.
// Frozen prefixes bind without gradient tracking.
class Binder {
public:
    Binder(Tape& tape, ParamStore& store, bool training)
        : tape_(tape), store_(store), training_(training) {}

    void freeze_prefix(const std::string& p) { frozen_.insert(p); }

    bool trainable(const std::string& name) const {
        if (!training_) return false;
        for (const auto& p : frozen_)
            if (name.rfind(p, 0) == 0) return false;
        return true;
    }

    int operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        int id = tape_.leaf(store_.param(name), trainable(name));
        bound_[name] = id;
        return id;
    }

    const std::map<std::string, int>& bound() const { return bound_; }
    bool training() const { return training_; }
    ParamStore& store() { return store_; }
    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    ParamStore& store_;
    bool training_;
    std::set<std::string> frozen_;
    std::map<std::string, int> bound_;
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    Tensor w(std::move(shape));
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    return w;
}

inline void init_dense(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    ps.params[name + "/w"] = glorot_uniform({in, out}, in, out, rng);
    ps.params[name + "/b"] = Tensor({out});
}

inline void init_conv(ParamStore& ps, const std::string& name, int kt, int kh, int kw, int ci,
                      int co, Rng& rng) {
    const int fan_in = kt * kh * kw * ci, fan_out = kt * kh * kw * co;
    ps.params[name + "/w"] = glorot_uniform({kt, kh, kw, ci, co}, fan_in, fan_out, rng);
    ps.params[name + "/b"] = Tensor({co});
}

inline void init_batchnorm(ParamStore& ps, const std::string& name, int features) {
    ps.params[name + "/gamma"] = Tensor({features}, 1.0);
    ps.params[name + "/beta"] = Tensor({features});
    ps.state[name + "/rmean"] = Tensor({features});
    ps.state[name + "/rvar"] = Tensor({features}, 1.0);
}

// Gate order in the 4U blocks: input, forget, cell, output. Forget bias
// starts at 1.
inline void init_lstm(ParamStore& ps, const std::string& name, int in, int units, Rng& rng) {
    ps.params[name + "/w"] = glorot_uniform({in, 4 * units}, in, 4 * units, rng);
    ps.params[name + "/u"] = glorot_uniform({units, 4 * units}, units, 4 * units, rng);
    Tensor b({4 * units});
    for (int i = units; i < 2 * units; ++i) b[i] = 1.0;
    ps.params[name + "/b"] = std::move(b);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

inline int dense(Tape& t, Binder& bind, const std::string& name, int x) {
    return add_bias(t, matmul(t, x, bind(name + "/w")), bind(name + "/b"));
}

inline int conv_layer(Tape& t, Binder& bind, const std::string& name, int x, int stride) {
    return conv3d(t, x, bind(name + "/w"), bind(name + "/b"), stride);
}

// Batch normalization over features of a (N,F) tensor. Training mode uses
// batch statistics (biased variance) and updates the running buffers in
// place; eval mode reads the running buffers.
inline int batchnorm(Tape& t, int x, int gamma, int beta, Tensor& running_mean,
                     Tensor& running_var, bool training, double momentum = 0.1,
                     double eps = 1e-5) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 2);
    const int n = xv.shape[0], f = xv.shape[1];

    auto mean = std::make_shared<std::vector<double>>(size_t(f), 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(size_t(f), 0.0);
    auto xhat = std::make_shared<Tensor>(xv.shape);

    if (training) {
        for (int j = 0; j < f; ++j) {
            double mu = 0.0;
            for (int i = 0; i < n; ++i) mu += xv.at(i, j);
            mu /= n;
            double var = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = xv.at(i, j) - mu;
                var += d * d;
            }
            var /= n;
            (*mean)[size_t(j)] = mu;
            (*inv_std)[size_t(j)] = 1.0 / std::sqrt(var + eps);
            running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mu;
            running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var;
        }
    } else {
        for (int j = 0; j < f; ++j) {
            (*mean)[size_t(j)] = running_mean[j];
            (*inv_std)[size_t(j)] = 1.0 / std::sqrt(running_var[j] + eps);
        }
    }

    const Tensor& gv = t.val(gamma);
    const Tensor& bv = t.val(beta);
    Tensor y(xv.shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) {
            const double xh = (xv.at(i, j) - (*mean)[size_t(j)]) * (*inv_std)[size_t(j)];
            xhat->at(i, j) = xh;
            y.at(i, j) = gv[j] * xh + bv[j];
        }

    return t.emit(std::move(y), {x, gamma, beta},
                  [&t, x, gamma, beta, n, f, mean, inv_std, xhat, training,
                   id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& gv2 = t.val(gamma);
        if (t.needs_grad(gamma)) {
            Tensor& gg = t.grad(gamma);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < f; ++j) gg[j] += g[int64_t(i) * f + j] * xhat->at(i, j);
        }
        if (t.needs_grad(beta)) {
            Tensor& gb = t.grad(beta);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < f; ++j) gb[j] += g[int64_t(i) * f + j];
        }
        if (t.needs_grad(x)) {
            Tensor& gx = t.grad(x);
            if (training) {
                // Full batch-statistics backward.
                for (int j = 0; j < f; ++j) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double gh = g[int64_t(i) * f + j] * gv2[j];
                        sum_g += gh;
                        sum_gx += gh * xhat->at(i, j);
                    }
                    for (int i = 0; i < n; ++i) {
                        const double gh = g[int64_t(i) * f + j] * gv2[j];
                        gx[int64_t(i) * f + j] +=
                            (*inv_std)[size_t(j)] *
                            (gh - sum_g / n - xhat->at(i, j) * sum_gx / n);
                    }
                }
            } else {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < f; ++j)
                        gx[int64_t(i) * f + j] +=
                            g[int64_t(i) * f + j] * gv2[j] * (*inv_std)[size_t(j)];
            }
        }
    });
}

// Frozen modules run their normalization in inference mode so that freezing
// really leaves the module untouched (no running-stat updates) and features
// stay deterministic per sample.
inline int batchnorm_layer(Tape& t, Binder& bind, const std::string& name, int x,
                           bool training) {
    return batchnorm(t, x, bind(name + "/gamma"), bind(name + "/beta"),
                     bind.store().state_buf(name + "/rmean"),
                     bind.store().state_buf(name + "/rvar"), training);
}

inline int batchnorm_layer(Tape& t, Binder& bind, const std::string& name, int x) {
    return batchnorm_layer(t, bind, name, x, bind.training());
}

// Inverted dropout; identity when not training or rate == 0.
inline int dropout(Tape& t, int x, double rate, Rng* rng, bool training) {
    if (!training || rate <= 0.0) return x;
    const Tensor& xv = t.val(x);
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<float>>(size_t(xv.numel()));
    Tensor y = xv;
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const bool on = rng->uniform() < keep;
        (*mask)[size_t(i)] = on ? float(1.0 / keep) : 0.0f;
        y[i] *= (*mask)[size_t(i)];
    }
    return t.emit(std::move(y), {x}, [&t, x, mask, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*mask)[size_t(i)];
    });
}

// Sequence-to-sequence LSTM layer: x (N,T,C) -> (N,T,units).
inline int lstm_seq(Tape& t, Binder& bind, const std::string& name, int x) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 3);
    const int n = xv.shape[0], T = xv.shape[1];
    const int w_id = bind(name + "/w"), u_id = bind(name + "/u"), b_id = bind(name + "/b");
    const int units = t.val(u_id).shape[0];

    int h = t.leaf(Tensor({n, units}));
    int c = t.leaf(Tensor({n, units}));
    std::vector<int> outputs;
    outputs.reserve(size_t(T));
    for (int k = 0; k < T; ++k) {
        const int xt = slice_time(t, x, k);
        int pre = add(t, matmul(t, xt, w_id), matmul(t, h, u_id));
        pre = add_bias(t, pre, b_id);
        const int gi = sigmoid(t, slice_cols(t, pre, 0, units));
        const int gf = sigmoid(t, slice_cols(t, pre, units, 2 * units));
        const int gc = tanh_op(t, slice_cols(t, pre, 2 * units, 3 * units));
        const int go = sigmoid(t, slice_cols(t, pre, 3 * units, 4 * units));
        c = add(t, mul(t, gf, c), mul(t, gi, gc));
        h = mul(t, go, tanh_op(t, c));
        outputs.push_back(h);
    }
    return stack_time(t, outputs);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::map<std::string, Tensor> m, v;

    explicit Adam(double learning_rate) : lr(learning_rate) {}

    // Applies one update using gradients accumulated on the tape for every
    // bound trainable parameter that received a gradient.
    void step(Tape& tape, ParamStore& store, const std::map<std::string, int>& bound) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (const auto& [name, id] : bound) {
            if (!tape.needs_grad(id) || !tape.has_grad(id)) continue;
            const Tensor& g = tape.grad(id);
            Tensor& p = store.param(name);
            Tensor& mi = m.try_emplace(name, Tensor(p.shape)).first->second;
            Tensor& vi = v.try_emplace(name, Tensor(p.shape)).first->second;
            for (int64_t i = 0; i < p.numel(); ++i) {
                mi[i] = beta1 * mi[i] + (1.0 - beta1) * g[i];
                vi[i] = beta2 * vi[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = mi[i] / bc1;
                const double vhat = vi[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

}  // namespace mood
