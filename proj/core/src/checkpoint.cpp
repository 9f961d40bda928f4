#include "pillarseg/checkpoint.hpp"

#include <cstring>
#include <map>

#include "pillarseg/errors.hpp"

namespace pillarseg {
namespace {

constexpr char kMagic[4] = {'P', 'S', 'N', 'C'};
constexpr std::uint8_t kVersion = 1;

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 24));
}

void put_f64(Bytes& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int b = 0; b < 8; ++b) out.push_back(std::uint8_t(bits >> (8 * b)));
}

struct Reader {
  const Bytes& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = std::uint32_t(bytes[pos]) | std::uint32_t(bytes[pos + 1]) << 8 |
                      std::uint32_t(bytes[pos + 2]) << 16 | std::uint32_t(bytes[pos + 3]) << 24;
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[pos + b]) << (8 * b);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

std::size_t element_count(const std::vector<std::uint32_t>& shape) {
  std::size_t n = 1;
  for (std::uint32_t d : shape) n *= d;
  return n;
}

std::vector<std::uint32_t> to_u32_shape(const ad::Shape& shape) {
  std::vector<std::uint32_t> out;
  for (std::size_t d : shape) out.push_back(std::uint32_t(d));
  return out;
}

// Trainable names in parameters() order, for pairing optimizer slots.
std::vector<std::string> trainable_names(NetworkParams& params) {
  std::vector<std::string> names;
  for (auto& [name, tensor] : params.named_tensors())
    if (tensor.requires_grad()) names.push_back(name);
  return names;
}

const TensorRecord& find(const std::map<std::string, const TensorRecord*>& index,
                         const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw FormatError("checkpoint record missing: " + name);
  return *it->second;
}

std::map<std::string, const TensorRecord*> index_records(
    const std::vector<TensorRecord>& records) {
  std::map<std::string, const TensorRecord*> index;
  for (const TensorRecord& r : records)
    if (!index.emplace(r.name, &r).second)
      throw FormatError("duplicate checkpoint record: " + r.name);
  return index;
}

}  // namespace

Bytes serialize_records(const std::vector<TensorRecord>& records) {
  Bytes out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  for (const TensorRecord& r : records) {
    if (r.values.size() != element_count(r.shape))
      throw FormatError("record " + r.name + " has " + std::to_string(r.values.size()) +
                        " values for its shape");
    put_u32(out, std::uint32_t(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, std::uint32_t(r.shape.size()));
    for (std::uint32_t d : r.shape) put_u32(out, d);
    for (double v : r.values) put_f64(out, v);
  }
  return out;
}

std::vector<TensorRecord> parse_records(const Bytes& bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint file");
  if (bytes[4] != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(bytes[4]));
  Reader reader{bytes, 5};
  std::vector<TensorRecord> records;
  while (reader.pos < bytes.size()) {
    TensorRecord r;
    std::uint32_t name_len = reader.u32();
    reader.need(name_len);
    r.name.assign(reinterpret_cast<const char*>(bytes.data()) + reader.pos, name_len);
    reader.pos += name_len;
    std::uint32_t rank = reader.u32();
    for (std::uint32_t a = 0; a < rank; ++a) r.shape.push_back(reader.u32());
    std::size_t count = element_count(r.shape);
    r.values.reserve(count);
    for (std::size_t v = 0; v < count; ++v) r.values.push_back(reader.f64());
    records.push_back(std::move(r));
  }
  return records;
}

Bytes save_checkpoint(NetworkParams& params, Adam* optimizer, const std::string& config_text) {
  std::vector<TensorRecord> records;
  for (auto& [name, tensor] : params.named_tensors())
    records.push_back({name, to_u32_shape(tensor.shape()), tensor.value()});

  if (optimizer) {
    std::vector<std::string> names = trainable_names(params);
    if (names.size() != optimizer->params().size())
      throw FormatError("optimizer does not match the network parameter list");
    for (std::size_t p = 0; p < names.size(); ++p) {
      const std::vector<std::uint32_t> shape = to_u32_shape(optimizer->params()[p].shape());
      records.push_back({"adam.m." + names[p], shape, optimizer->first_moments()[p]});
      records.push_back({"adam.v." + names[p], shape, optimizer->second_moments()[p]});
    }
    records.push_back({"adam.t", {}, {double(optimizer->step_count())}});
  }

  if (!config_text.empty()) {
    TensorRecord cfg{"config.text", {std::uint32_t(config_text.size())}, {}};
    for (char c : config_text) cfg.values.push_back(double(std::uint8_t(c)));
    records.push_back(std::move(cfg));
  }
  return serialize_records(records);
}

void restore_params(NetworkParams& params, const std::vector<TensorRecord>& records) {
  auto index = index_records(records);
  for (auto& [name, tensor] : params.named_tensors()) {
    const TensorRecord& r = find(index, name);
    if (r.shape != to_u32_shape(tensor.shape()))
      throw FormatError("shape mismatch restoring " + name);
    tensor.value() = r.values;
  }
}

void restore_optimizer(Adam& optimizer, NetworkParams& params,
                       const std::vector<TensorRecord>& records) {
  auto index = index_records(records);
  std::vector<std::string> names = trainable_names(params);
  if (names.size() != optimizer.params().size())
    throw FormatError("optimizer does not match the network parameter list");
  for (std::size_t p = 0; p < names.size(); ++p) {
    const TensorRecord& m = find(index, "adam.m." + names[p]);
    const TensorRecord& v = find(index, "adam.v." + names[p]);
    if (m.values.size() != optimizer.params()[p].numel() ||
        v.values.size() != optimizer.params()[p].numel())
      throw FormatError("optimizer moment size mismatch for " + names[p]);
    optimizer.first_moments()[p] = m.values;
    optimizer.second_moments()[p] = v.values;
  }
  const TensorRecord& t = find(index, "adam.t");
  if (t.values.size() != 1) throw FormatError("adam.t must hold one value");
  optimizer.set_step_count(std::uint64_t(t.values[0]));
}

bool has_optimizer_state(const std::vector<TensorRecord>& records) {
  for (const TensorRecord& r : records)
    if (r.name == "adam.t") return true;
  return false;
}

std::string checkpoint_config_text(const std::vector<TensorRecord>& records) {
  for (const TensorRecord& r : records)
    if (r.name == "config.text") {
      std::string text;
      for (double v : r.values) text.push_back(char(std::uint8_t(v)));
      return text;
    }
  return "";
}

}  // namespace pillarseg
