#include "sdtt/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace sdtt {
namespace {

constexpr std::string_view kMagic = "SDTTCKPT1";

void put_vector(io::Writer& w, const VectorX<float>& v) {
  w.put_array(v.data(), static_cast<std::size_t>(v.size()));
}

VectorX<float> get_vector(io::Reader& r, Eigen::Index n) {
  VectorX<float> v(n);
  r.get_array(v.data(), static_cast<std::size_t>(n));
  return v;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& s) {
  io::Writer w;
  w.put_bytes(kMagic);
  const auto& c = s.config;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_layers));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_heads));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.context));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.vocab));
  w.put<std::uint8_t>(c.causal ? 1 : 0);
  w.put<std::uint8_t>(c.rotary ? 1 : 0);
  w.put<std::int64_t>(s.step);
  w.put<std::int64_t>(s.round);
  w.put<double>(s.ema_decay);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(s.params.size()));
  put_vector(w, s.params);
  put_vector(w, s.ema);
  put_vector(w, s.adam_m);
  put_vector(w, s.adam_v);
  std::string bytes = w.bytes();
  io::Writer tail;
  tail.put<std::uint64_t>(fnv1a64(bytes));
  return bytes + tail.bytes();
}

TrainState deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + sizeof(std::uint64_t) ||
      std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    throw DataError("not a checkpoint file");
  }
  const std::string_view body(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  io::Reader tail(std::string_view(bytes).substr(body.size()));
  if (tail.get<std::uint64_t>() != fnv1a64(body)) throw DataError("checkpoint checksum mismatch");

  io::Reader r(body);
  r.get_bytes(kMagic.size());
  TrainState s;
  auto& c = s.config;
  c.n_layers = static_cast<int>(r.get<std::uint32_t>());
  c.embed_dim = static_cast<int>(r.get<std::uint32_t>());
  c.n_heads = static_cast<int>(r.get<std::uint32_t>());
  c.context = static_cast<int>(r.get<std::uint32_t>());
  c.vocab = static_cast<int>(r.get<std::uint32_t>());
  c.causal = r.get<std::uint8_t>() != 0;
  c.rotary = r.get<std::uint8_t>() != 0;
  try {
    c.validate();
  } catch (const InputError& e) {
    throw DataError(std::string("checkpoint has an invalid model config: ") + e.what());
  }
  s.step = r.get<std::int64_t>();
  s.round = r.get<std::int64_t>();
  s.ema_decay = r.get<double>();
  const auto n = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  if (n != ParamLayout(c).total) throw DataError("checkpoint parameter count does not match config");
  s.params = get_vector(r, n);
  s.ema = get_vector(r, n);
  s.adam_m = get_vector(r, n);
  s.adam_v = get_vector(r, n);
  if (r.remaining() != 0) throw DataError("trailing bytes in checkpoint");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_text_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string params_hash(const VectorX<float>& params) {
  return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(params.data()),
                                        static_cast<std::size_t>(params.size()) * sizeof(float))));
}

}  // namespace sdtt
