#include "gora/adapter.hpp"

#include "gora/io.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace gora {

std::string to_string(ScalingMode mode) { return mode == ScalingMode::lora ? "lora" : "rslora"; }

ScalingMode parse_scaling_mode(const std::string& s) {
  if (s == "lora") return ScalingMode::lora;
  if (s == "rslora") return ScalingMode::rslora;
  throw ConfigError("unknown scaling mode '" + s + "' (expected lora or rslora)");
}

double scaling_factor(double alpha, std::size_t rank, ScalingMode mode) {
  if (!(alpha > 0.0)) throw ConfigError("adapter alpha must be positive");
  if (rank == 0) throw ShapeError("adapter rank must be at least 1");
  const double r = static_cast<double>(rank);
  return mode == ScalingMode::lora ? alpha / r : alpha / std::sqrt(r);
}

void AdapterState::validate(std::size_t m, std::size_t n) const {
  if (a.cols() != b.rows()) {
    throw ShapeError("adapter A " + shape_string(a) + " does not chain with B " + shape_string(b));
  }
  if (in_dim() != m || out_dim() != n) {
    throw ShapeError("adapter " + shape_string(a) + "·" + shape_string(b) + " does not fit host (" +
                     std::to_string(m) + "x" + std::to_string(n) + ")");
  }
  if (rank() == 0 || rank() > std::min(m, n)) {
    throw ShapeError("adapter rank " + std::to_string(rank()) + " outside [1, min(m, n)]");
  }
}

Matrix adapter_forward(const Matrix& x, const Matrix& w0, const AdapterState& ad) {
  ad.validate(static_cast<std::size_t>(w0.rows()), static_cast<std::size_t>(w0.cols()));
  if (x.cols() != w0.rows()) {
    throw ShapeError("adapter_forward: input " + shape_string(x) + " vs weight " + shape_string(w0));
  }
  Matrix out = x * w0;
  out.noalias() += ad.scale() * ((x * ad.a) * ad.b);
  return out;
}

AdapterGrads adapter_grads(const Matrix& g, const AdapterState& ad) {
  if (static_cast<std::size_t>(g.rows()) != ad.in_dim() || static_cast<std::size_t>(g.cols()) != ad.out_dim()) {
    throw ShapeError("adapter_grads: weight gradient " + shape_string(g) + " does not match adapter " +
                     shape_string(ad.a) + "·" + shape_string(ad.b));
  }
  const double s = ad.scale();
  AdapterGrads out;
  out.a = ad.freeze_a ? Matrix::Zero(ad.a.rows(), ad.a.cols()) : Matrix(s * (g * ad.b.transpose()));
  out.b = s * (ad.a.transpose() * g);
  return out;
}

Matrix delta(const AdapterState& ad) { return ad.scale() * (ad.a * ad.b); }

Matrix merge(const Matrix& w0, const AdapterState& ad) {
  if (w0.rows() != ad.a.rows() || w0.cols() != ad.b.cols()) {
    throw ShapeError("merge: base " + shape_string(w0) + " vs adapter " + shape_string(ad.a) + "·" +
                     shape_string(ad.b));
  }
  return w0 + delta(ad);
}

void check_adapters(const Network& net, const AdapterSet& adapters) {
  for (const auto& [id, ad] : adapters) {
    if (id >= net.size()) throw ShapeError("adapter attached to missing layer " + std::to_string(id));
    const auto& spec = net.layer(id).spec;
    ad.validate(spec.in_dim, spec.out_dim);
  }
}

LowRankViews low_rank_views(const Network& net, const AdapterSet& adapters) {
  check_adapters(net, adapters);
  LowRankViews views;
  views.reserve(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto it = adapters.find(i);
    if (it == adapters.end()) {
      views.emplace_back(std::nullopt);
    } else {
      views.emplace_back(LowRankView{it->second.a, it->second.b, it->second.scale()});
    }
  }
  return views;
}

void write_adapters(std::ostream& out, const AdapterSet& adapters) {
  for (const auto& [id, ad] : adapters) {
    io::write_magic(out, "GADP");
    io::write_u32(out, static_cast<std::uint32_t>(id));
    io::write_u32(out, static_cast<std::uint32_t>(ad.rank()));
    io::write_f64(out, ad.alpha);
    io::write_u8(out, ad.mode == ScalingMode::lora ? 0 : 1);
    io::write_u8(out, ad.freeze_a ? 1 : 0);
    io::write_matrix(out, ad.a);
    io::write_matrix(out, ad.b);
  }
}

AdapterSet read_adapters(std::istream& in) {
  AdapterSet out;
  while (in.peek() != std::char_traits<char>::eof()) {
    io::expect_magic(in, "GADP");
    const LayerId id = io::read_u32(in);
    const std::uint32_t rank = io::read_u32(in);
    AdapterState ad;
    ad.alpha = io::read_f64(in);
    const std::uint8_t mode = io::read_u8(in);
    if (mode > 1) throw FormatError("GADP: unknown scaling mode tag " + std::to_string(mode));
    ad.mode = mode == 0 ? ScalingMode::lora : ScalingMode::rslora;
    ad.freeze_a = io::read_u8(in) != 0;
    ad.a = io::read_matrix(in);
    ad.b = io::read_matrix(in);
    if (ad.rank() != rank || ad.a.cols() != ad.b.rows()) {
      throw FormatError("GADP: record for layer " + std::to_string(id) + " has inconsistent rank");
    }
    if (!out.emplace(id, std::move(ad)).second) {
      throw FormatError("GADP: duplicate record for layer " + std::to_string(id));
    }
  }
  return out;
}

std::string serialize_adapters(const AdapterSet& adapters) {
  std::ostringstream out(std::ios::binary);
  write_adapters(out, adapters);
  return out.str();
}

AdapterSet deserialize_adapters(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_adapters(in);
}

std::uint64_t adapter_checksum(const AdapterSet& adapters) {
  return io::fnv1a64(serialize_adapters(adapters));
}

}  // namespace gora
