#include "nesyrs/nn.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace nesyrs {

Mlp init_mlp(const std::vector<int>& sizes, double dropout, uint64_t seed,
             const std::string& name_prefix) {
  if (sizes.size() < 2) throw std::runtime_error("init_mlp: need at least one layer");
  for (int s : sizes)
    if (s <= 0) throw std::runtime_error("init_mlp: zero-width layer");
  if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("init_mlp: dropout out of range");
  Mlp mlp;
  mlp.sizes = sizes;
  mlp.dropout = dropout;
  Rng rng(seed);
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    int fan_in = sizes[l], fan_out = sizes[l + 1];
    double s = std::sqrt(6.0 / (fan_in + fan_out));
    ParamBlock w;
    w.name = name_prefix + ".W" + std::to_string(l);
    w.rows = fan_out;
    w.cols = fan_in;
    w.v.resize(static_cast<size_t>(fan_out) * fan_in);
    for (auto& x : w.v) x = rng.uniform(-s, s);
    ParamBlock b;
    b.name = name_prefix + ".b" + std::to_string(l);
    b.rows = fan_out;
    b.cols = 1;
    b.v.assign(fan_out, 0.0);
    mlp.blocks.push_back(std::move(w));
    mlp.blocks.push_back(std::move(b));
  }
  return mlp;
}

TapeParams stage_params(Tape& t, const Mlp& mlp) {
  TapeParams p;
  for (const auto& b : mlp.blocks) p.ids.push_back(t.leaf(b.v));
  return p;
}

NodeId mlp_forward(Tape& t, const Mlp& mlp, const TapeParams& params, NodeId x, Mode mode,
                   Rng& rng) {
  NodeId h = x;
  size_t n_layers = mlp.sizes.size() - 1;
  for (size_t l = 0; l < n_layers; ++l) {
    NodeId w = params.ids[2 * l];
    NodeId b = params.ids[2 * l + 1];
    h = op_affine(t, w, b, h, mlp.sizes[l + 1], mlp.sizes[l]);
    if (l + 1 < n_layers) {
      h = op_relu(t, h);
      if (mlp.dropout > 0.0 && mode == Mode::Train) {
        std::vector<double> mask(mlp.sizes[l + 1]);
        double keep = 1.0 - mlp.dropout;
        for (auto& m : mask) m = rng.uniform() < mlp.dropout ? 0.0 : 1.0 / keep;
        h = op_mask(t, h, std::move(mask));
      }
    }
  }
  return h;
}

std::vector<double> mlp_forward_plain(const Mlp& mlp, const std::vector<double>& x, Mode mode,
                                      Rng* rng) {
  std::vector<double> h = x;
  size_t n_layers = mlp.sizes.size() - 1;
  for (size_t l = 0; l < n_layers; ++l) {
    const auto& w = mlp.blocks[2 * l];
    const auto& b = mlp.blocks[2 * l + 1];
    std::vector<double> out(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      double s = b.v[r];
      const double* wr = w.v.data() + static_cast<size_t>(r) * w.cols;
      for (int c = 0; c < w.cols; ++c) s += wr[c] * h[c];
      out[r] = s;
    }
    if (l + 1 < n_layers) {
      for (auto& v : out)
        if (v < 0.0) v = 0.0;
      if (mlp.dropout > 0.0 && mode == Mode::Train) {
        double keep = 1.0 - mlp.dropout;
        for (auto& v : out) v = rng->uniform() < mlp.dropout ? 0.0 : v / keep;
      }
    }
    h = std::move(out);
  }
  return h;
}

void read_grads(Tape& t, const TapeParams& params, const Mlp& mlp,
                std::vector<std::vector<double>>& grads) {
  grads.resize(mlp.blocks.size());
  for (size_t i = 0; i < mlp.blocks.size(); ++i) {
    auto& g = t.grad(params.ids[i]);
    grads[i] = g;
  }
}

AdamState init_adam(const std::vector<Mlp*>& models, double lr, double decay) {
  AdamState st;
  st.lr = lr;
  st.decay = decay;
  for (const Mlp* m : models)
    for (const auto& b : m->blocks) {
      st.m.emplace_back(b.v.size(), 0.0);
      st.v.emplace_back(b.v.size(), 0.0);
    }
  return st;
}

void adam_step(std::vector<Mlp*>& models, const std::vector<std::vector<double>>& grads,
               AdamState& state) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  size_t bi = 0;
  for (Mlp* model : models) {
    for (auto& block : model->blocks) {
      const auto& g = grads[bi];
      if (g.size() != block.v.size()) throw std::runtime_error("adam_step: shape mismatch");
      auto& m = state.m[bi];
      auto& v = state.v[bi];
      for (size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw std::runtime_error("adam_step: non-finite gradient in block " + block.name);
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        block.v[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      }
      ++bi;
    }
  }
  if (bi != grads.size()) throw std::runtime_error("adam_step: block count mismatch");
}

namespace {

std::string double_to_hex(double d) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", d);
  return buf;
}

double hex_to_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

}  // namespace

std::string mlp_to_json(const Mlp& mlp) {
  nlohmann::json j;
  j["format"] = "nesyrs-mlp";
  j["version"] = 1;
  j["sizes"] = mlp.sizes;
  j["dropout"] = mlp.dropout;
  auto& blocks = j["blocks"] = nlohmann::json::array();
  for (const auto& b : mlp.blocks) {
    nlohmann::json jb;
    jb["name"] = b.name;
    jb["rows"] = b.rows;
    jb["cols"] = b.cols;
    std::vector<std::string> vals;
    vals.reserve(b.v.size());
    for (double d : b.v) vals.push_back(double_to_hex(d));
    jb["values"] = vals;
    blocks.push_back(std::move(jb));
  }
  return j.dump();
}

Mlp mlp_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  if (j.value("format", "") != "nesyrs-mlp" || j.value("version", 0) != 1)
    throw std::runtime_error("mlp_from_json: unrecognized checkpoint format");
  Mlp mlp;
  mlp.sizes = j.at("sizes").get<std::vector<int>>();
  mlp.dropout = j.at("dropout").get<double>();
  for (const auto& jb : j.at("blocks")) {
    ParamBlock b;
    b.name = jb.at("name").get<std::string>();
    b.rows = jb.at("rows").get<int>();
    b.cols = jb.at("cols").get<int>();
    for (const auto& s : jb.at("values")) b.v.push_back(hex_to_double(s.get<std::string>()));
    if (static_cast<int>(b.v.size()) != b.rows * b.cols)
      throw std::runtime_error("mlp_from_json: corrupted block " + b.name);
    mlp.blocks.push_back(std::move(b));
  }
  return mlp;
}

}  // namespace nesyrs
