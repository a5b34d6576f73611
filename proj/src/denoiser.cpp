#include "apo/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "apo/errors.hpp"
#include "apo/rng.hpp"
#include "apo/serialize.hpp"

namespace apo {

namespace {

Parameter gaussian_param(std::string name, Shape shape, double stddev, std::uint64_t seed, std::uint64_t slot) {
    Tensor t = seeded_gaussian(shape, seed, derive_stream(streams::kInit, slot));
    for (double& v : t.data()) v *= stddev;
    return Parameter(std::move(name), std::move(t));
}

}  // namespace

Denoiser Denoiser::init(const DenoiserDims& dims, std::uint64_t seed) {
    if (dims.n_layers < 2) throw std::invalid_argument("denoiser needs at least 2 layers");
    if (dims.n_tokens < 2) throw std::invalid_argument("denoiser needs the null token plus one condition");
    if (dims.time_dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even");
    Denoiser m;
    m.dims = dims;
    std::uint64_t slot = 0;
    for (std::size_t l = 0; l < dims.n_layers; ++l) {
        const std::size_t in = l == 0 ? dims.latent_dim : dims.hidden;
        const bool last = l + 1 == dims.n_layers;
        const std::size_t out = last ? dims.latent_dim : dims.hidden;
        DenseLayer layer;
        layer.weight = gaussian_param("layer" + std::to_string(l) + ".weight", {out, in},
                                      1.0 / std::sqrt(static_cast<double>(in)), seed, slot++);
        layer.bias = Parameter("layer" + std::to_string(l) + ".bias", Tensor({out}));
        layer.activation = last ? Activation::identity : Activation::silu;
        m.layers.push_back(std::move(layer));
    }
    m.cond_table = gaussian_param("cond_table", {dims.n_tokens, dims.hidden}, 0.5, seed, slot++);
    m.time_weight = gaussian_param("time.weight", {dims.hidden, dims.time_dim},
                                   1.0 / std::sqrt(static_cast<double>(dims.time_dim)), seed, slot++);
    m.time_bias = Parameter("time.bias", Tensor({dims.hidden}));
    return m;
}

void Denoiser::attach_schedule(const NoiseSchedule& schedule, double s_d) {
    if (!(s_d > 0.0)) throw std::invalid_argument("data std must be positive");
    data_std = s_d;
    const auto n = static_cast<std::size_t>(schedule.steps()) + 1;
    in_coef.assign(n, 0.0);
    skip_coef.assign(n, 0.0);
    out_coef.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const double a = schedule.alpha(static_cast<int>(t)), s = schedule.sigma(static_cast<int>(t));
        const double q = a * a * s_d * s_d + s * s;
        in_coef[t] = 1.0 / std::sqrt(q);
        skip_coef[t] = s / q;
        out_coef[t] = a * s_d / std::sqrt(q);
    }
}

std::vector<Parameter*> Denoiser::parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : layers) {
        ps.push_back(&l.weight);
        ps.push_back(&l.bias);
    }
    ps.push_back(&cond_table);
    ps.push_back(&time_weight);
    ps.push_back(&time_bias);
    return ps;
}

std::vector<const Parameter*> Denoiser::parameters() const {
    std::vector<const Parameter*> ps;
    for (const auto* p : const_cast<Denoiser*>(this)->parameters()) ps.push_back(p);
    return ps;
}

Tensor sinusoidal_embedding(int t, std::size_t dim, double max_period) {
    const std::size_t half = dim / 2;
    Tensor e({dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq;
        e[i] = std::sin(arg);
        e[half + i] = std::cos(arg);
    }
    return e;
}

void TemporalGate::validate() const {
    if (k_min < 1 || k_min > k_max) {
        throw std::invalid_argument("gate requires 1 <= k_min <= k_max (got k_min=" + std::to_string(k_min) +
                                    ", k_max=" + std::to_string(k_max) + ")");
    }
    if (T < 1) throw std::invalid_argument("gate horizon T must be positive");
}

int gate_dims(const TemporalGate& gate, int t) {
    gate.validate();
    if (t < 0 || t > gate.T) throw std::out_of_range("gate timestep " + std::to_string(t) + " out of range");
    // Integer division of non-negative operands is the floor.
    const long long span = static_cast<long long>(gate.k_max - gate.k_min) * (gate.T - t);
    return gate.k_min + static_cast<int>(span / gate.T);
}

Tensor gate_mask_for_dims(std::size_t rank, int k) {
    if (k < 0 || static_cast<std::size_t>(k) > rank) throw std::out_of_range("active dimension count exceeds rank");
    Tensor m({rank});
    for (int i = 0; i < k; ++i) m[static_cast<std::size_t>(i)] = 1.0;
    return m;
}

Tensor gate_matrix(const TemporalGate& gate, int t) {
    return gate_mask_for_dims(static_cast<std::size_t>(gate.k_max), gate_dims(gate, t));
}

LoraStack LoraStack::init(const Denoiser& model, const TemporalGate& gate, std::uint64_t seed) {
    gate.validate();
    LoraStack s;
    s.gate = gate;
    const auto r = static_cast<std::size_t>(gate.k_max);
    std::uint64_t slot = 1000;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& w = model.layers[l].weight.value;
        const std::size_t out = w.dim(0), in = w.dim(1);
        LoraAdapter ad;
        ad.a = gaussian_param("lora" + std::to_string(l) + ".A", {r, in}, 1.0 / std::sqrt(static_cast<double>(r)), seed,
                              slot++);
        ad.b = Parameter("lora" + std::to_string(l) + ".B", Tensor({out, r}));
        s.layers.push_back(std::move(ad));
    }
    return s;
}

std::vector<Parameter*> LoraStack::parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : layers) {
        ps.push_back(&l.a);
        ps.push_back(&l.b);
    }
    return ps;
}

std::vector<Tensor> LoraStack::active_masks(int t) const {
    const int k = gate_dims(gate, t);
    const std::size_t r = rank();
    std::vector<Tensor> masks;
    for (const auto& l : layers) {
        Tensor ma(l.a.value.shape());
        const std::size_t in = ma.dim(1);
        for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i)
            for (std::size_t j = 0; j < in; ++j) ma.at(i, j) = 1.0;
        Tensor mb(l.b.value.shape());
        const std::size_t out = mb.dim(0);
        for (std::size_t i = 0; i < out; ++i)
            for (std::size_t j = 0; j < static_cast<std::size_t>(k) && j < r; ++j) mb.at(i, j) = 1.0;
        masks.push_back(std::move(ma));
        masks.push_back(std::move(mb));
    }
    return masks;
}

Tensor effective_delta(const LoraAdapter& adapter, const TemporalGate& gate, int t) {
    const Tensor& a = adapter.a.value;
    const Tensor& b = adapter.b.value;
    if (a.rank() != 2 || b.rank() != 2 || b.dim(1) != a.dim(0)) {
        throw std::invalid_argument("effective_delta: inconsistent adapter shapes " + shape_str(b.shape()) + " x " +
                                    shape_str(a.shape()));
    }
    const Tensor mask = gate_matrix(gate, t);
    if (mask.size() != a.dim(0)) throw std::invalid_argument("effective_delta: gate rank does not match adapter rank");
    Tensor bm = b;
    for (std::size_t i = 0; i < bm.dim(0); ++i)
        for (std::size_t j = 0; j < bm.dim(1); ++j) bm.at(i, j) *= mask[j];
    return matmul(bm, a);
}

Var denoiser_forward(Graph& g, const Denoiser& model, const LoraStack* adapters, Var z,
                     const std::vector<std::size_t>& tokens, const std::vector<int>& timesteps,
                     TrainableSet trainable) {
    const auto& dims = model.dims;
    const Tensor& zv = z.value();
    if (zv.rank() != 2 || zv.dim(1) != dims.latent_dim) {
        throw std::invalid_argument("denoiser input must be [n, " + std::to_string(dims.latent_dim) + "], got " +
                                    shape_str(zv.shape()));
    }
    const std::size_t n = zv.dim(0);
    if (tokens.size() != n || timesteps.size() != n) throw std::invalid_argument("token/timestep count mismatch");
    for (auto c : tokens) {
        if (c >= dims.n_tokens) throw std::invalid_argument("unknown token " + std::to_string(c));
    }
    if (adapters && adapters->layers.size() != model.layers.size()) {
        throw std::invalid_argument("adapter stack does not match denoiser depth");
    }

    Denoiser* mut_ref = trainable.reference == &model ? trainable.reference : nullptr;
    LoraStack* mut_ad = (adapters && trainable.adapters == adapters) ? trainable.adapters : nullptr;
    auto ref_param = [&](const Parameter& p, Parameter* mp) { return mut_ref ? g.leaf(*mp) : g.constant_ref(p.value); };

    // Time embedding rows.
    Tensor temb({n, dims.time_dim});
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor e = sinusoidal_embedding(timesteps[i], dims.time_dim, dims.max_period);
        for (std::size_t j = 0; j < dims.time_dim; ++j) temb.at(i, j) = e[j];
    }

    // Gate masks per row, shared by every adapted layer.
    Tensor gate_rows;
    if (adapters) {
        const std::size_t r = adapters->rank();
        gate_rows = Tensor({n, r});
        for (std::size_t i = 0; i < n; ++i) {
            const int k = gate_dims(adapters->gate, timesteps[i]);
            for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j) gate_rows.at(i, j) = 1.0;
        }
    }

    Tensor in_rows, skip_rows, out_rows;
    if (model.preconditioned()) {
        in_rows = Tensor({n, dims.latent_dim});
        skip_rows = Tensor({n, dims.latent_dim});
        out_rows = Tensor({n, dims.latent_dim});
        for (std::size_t i = 0; i < n; ++i) {
            const auto t = static_cast<std::size_t>(timesteps[i]);
            if (t >= model.skip_coef.size()) throw std::out_of_range("timestep beyond the attached schedule");
            for (std::size_t j = 0; j < dims.latent_dim; ++j) {
                in_rows.at(i, j) = model.in_coef[t];
                skip_rows.at(i, j) = model.skip_coef[t];
                out_rows.at(i, j) = model.out_coef[t];
            }
        }
    }

    Var h = model.preconditioned() ? ad::mul_const(z, in_rows) : z;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const DenseLayer& layer = model.layers[l];
        Var w = ref_param(layer.weight, mut_ref ? &mut_ref->layers[l].weight : nullptr);
        Var b = ref_param(layer.bias, mut_ref ? &mut_ref->layers[l].bias : nullptr);
        Var pre = ad::add_bias(ad::linear(h, w), b);
        if (adapters) {
            const LoraAdapter& la = adapters->layers[l];
            Var a = mut_ad ? g.leaf(mut_ad->layers[l].a) : g.constant_ref(la.a.value);
            Var bb = mut_ad ? g.leaf(mut_ad->layers[l].b) : g.constant_ref(la.b.value);
            Var low = ad::mul_const(ad::linear(h, a), gate_rows);
            pre = ad::add(pre, ad::linear(low, bb));
        }
        if (l == 0) {
            Var table = ref_param(model.cond_table, mut_ref ? &mut_ref->cond_table : nullptr);
            Var tw = ref_param(model.time_weight, mut_ref ? &mut_ref->time_weight : nullptr);
            Var tb = ref_param(model.time_bias, mut_ref ? &mut_ref->time_bias : nullptr);
            Var time_h = ad::add_bias(ad::linear(g.constant(temb), tw), tb);
            pre = ad::add(ad::add(pre, ad::gather_rows(table, tokens)), time_h);
        }
        h = layer.activation == Activation::silu ? ad::silu(pre) : pre;
    }
    if (!model.preconditioned()) return h;
    return ad::add(ad::mul_const(z, skip_rows), ad::mul_const(h, out_rows));
}

Tensor predict_noise(const Denoiser& model, const LoraStack* adapters, const Tensor& z_t, std::size_t token, int t) {
    if (z_t.size() != model.dims.latent_dim) {
        throw std::invalid_argument("latent size " + std::to_string(z_t.size()) + " does not match denoiser");
    }
    if (token >= model.dims.n_tokens) throw std::invalid_argument("unknown token " + std::to_string(token));
    Graph g;
    Var z = g.constant(z_t.reshaped({1, model.dims.latent_dim}));
    Var out = denoiser_forward(g, model, adapters, z, {token}, {t});
    return out.value().reshaped(z_t.shape());
}

// ---- checkpoints ----

namespace {

void write_header(std::ostream& os, const CheckpointHeader& h) {
    le::put_magic(os, "APOC");
    le::put_u32(os, h.version);
    le::put_u8(os, static_cast<std::uint8_t>(h.role));
    le::put_u8(os, h.schedule_kind == ScheduleKind::linear ? 0 : 1);
    le::put_f64(os, h.data_std);
    le::put_u32(os, h.T);
    le::put_u32(os, static_cast<std::uint32_t>(h.dims.latent_dim));
    le::put_u32(os, static_cast<std::uint32_t>(h.dims.hidden));
    le::put_u32(os, static_cast<std::uint32_t>(h.dims.n_layers));
    le::put_u32(os, static_cast<std::uint32_t>(h.dims.n_tokens));
    le::put_u32(os, static_cast<std::uint32_t>(h.dims.time_dim));
    le::put_f64(os, h.dims.max_period);
    le::put_u32(os, h.rank);
    le::put_u32(os, h.k_min);
    le::put_u32(os, h.k_max);
}

CheckpointHeader read_header(std::istream& is) {
    le::expect_magic(is, "APOC");
    CheckpointHeader h;
    h.version = le::get_u32(is);
    if (h.version != 2) throw std::runtime_error("unsupported checkpoint version " + std::to_string(h.version));
    const auto role = le::get_u8(is);
    if (role > 1) throw std::runtime_error("bad checkpoint role byte");
    h.role = static_cast<CheckpointRole>(role);
    const auto kind = le::get_u8(is);
    if (kind > 1) throw std::runtime_error("bad schedule kind byte");
    h.schedule_kind = kind == 0 ? ScheduleKind::linear : ScheduleKind::cosine;
    h.data_std = le::get_f64(is);
    if (!(h.data_std >= 0.0)) throw std::runtime_error("bad data std in checkpoint");
    h.T = le::get_u32(is);
    h.dims.latent_dim = le::get_u32(is);
    h.dims.hidden = le::get_u32(is);
    h.dims.n_layers = le::get_u32(is);
    h.dims.n_tokens = le::get_u32(is);
    h.dims.time_dim = le::get_u32(is);
    h.dims.max_period = le::get_f64(is);
    h.rank = le::get_u32(is);
    h.k_min = le::get_u32(is);
    h.k_max = le::get_u32(is);
    return h;
}

void write_tensors(std::ostream& os, const std::vector<const Tensor*>& ts) {
    le::put_u32(os, static_cast<std::uint32_t>(ts.size()));
    for (const Tensor* t : ts) write_tensor(os, *t);
}

void read_into(std::istream& is, const std::vector<Parameter*>& ps) {
    const auto count = le::get_u32(is);
    if (count != ps.size()) throw std::runtime_error("checkpoint tensor count mismatch");
    for (Parameter* p : ps) {
        Tensor t = read_tensor(is);
        if (t.shape() != p->value.shape()) {
            throw std::runtime_error("checkpoint tensor " + p->name + " has shape " + shape_str(t.shape()) +
                                     ", expected " + shape_str(p->value.shape()));
        }
        p->value = std::move(t);
        p->grad = Tensor(p->value.shape());
    }
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("missing checkpoint " + path.string());
    return is;
}

}  // namespace

void save_reference(const std::filesystem::path& path, const Denoiser& model, ScheduleKind kind, int T) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    CheckpointHeader h;
    h.role = CheckpointRole::reference;
    h.schedule_kind = kind;
    h.T = static_cast<std::uint32_t>(T);
    h.dims = model.dims;
    h.data_std = model.data_std;
    if (model.preconditioned() && model.skip_coef.size() != static_cast<std::size_t>(T) + 1)
        throw std::invalid_argument("attached schedule does not match T");
    write_header(os, h);
    std::vector<const Tensor*> ts;
    for (const Parameter* p : model.parameters()) ts.push_back(&p->value);
    write_tensors(os, ts);
}

void save_adapters(const std::filesystem::path& path, const LoraStack& adapters, const DenoiserDims& dims,
                   ScheduleKind kind) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    CheckpointHeader h;
    h.role = CheckpointRole::adapter;
    h.schedule_kind = kind;
    h.T = static_cast<std::uint32_t>(adapters.gate.T);
    h.dims = dims;
    h.rank = static_cast<std::uint32_t>(adapters.rank());
    h.k_min = static_cast<std::uint32_t>(adapters.gate.k_min);
    h.k_max = static_cast<std::uint32_t>(adapters.gate.k_max);
    write_header(os, h);
    std::vector<const Tensor*> ts;
    for (const auto& l : adapters.layers) {
        ts.push_back(&l.a.value);
        ts.push_back(&l.b.value);
    }
    write_tensors(os, ts);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    auto is = open_checkpoint(path);
    return read_header(is);
}

ReferenceCheckpoint load_reference(const std::filesystem::path& path) {
    auto is = open_checkpoint(path);
    ReferenceCheckpoint ck;
    ck.header = read_header(is);
    if (ck.header.role != CheckpointRole::reference) throw std::runtime_error(path.string() + " is not a reference checkpoint");
    ck.model = Denoiser::init(ck.header.dims, 0);
    read_into(is, ck.model.parameters());
    if (ck.header.data_std > 0.0)
        ck.model.attach_schedule(build_schedule(static_cast<int>(ck.header.T), ck.header.schedule_kind),
                                 ck.header.data_std);
    return ck;
}

AdapterCheckpoint load_adapters(const std::filesystem::path& path) {
    auto is = open_checkpoint(path);
    AdapterCheckpoint ck;
    ck.header = read_header(is);
    if (ck.header.role != CheckpointRole::adapter) throw std::runtime_error(path.string() + " is not an adapter checkpoint");
    Denoiser shape_model = Denoiser::init(ck.header.dims, 0);
    TemporalGate gate{static_cast<int>(ck.header.k_min), static_cast<int>(ck.header.k_max), static_cast<int>(ck.header.T)};
    ck.adapters = LoraStack::init(shape_model, gate, 0);
    read_into(is, ck.adapters.parameters());
    return ck;
}

}  // namespace apo
