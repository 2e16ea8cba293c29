#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "aem/model.hpp"

namespace aem {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'E', 'M', 'T'};

template <typename V>
void put(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t& off) : b_(b), off_(off) {}

  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > b_.size() - off_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(off_));
    const std::uint8_t* p = b_.data() + off_;
    off_ += n;
    return p;
  }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return off_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t& off_;
};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 1 : 2;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_tensors(const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  std::vector<std::uint8_t> out;
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    put<std::uint8_t>(out, dtype_code<T>());
    put_bytes(out, t.data().data(), t.data().size() * sizeof(T));
  }
  return out;
}

std::vector<StoredTensor> decode_tensors(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  Reader r(bytes, offset);
  const auto count = r.get<std::uint64_t>();
  std::vector<StoredTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>();
      if (d > (1ULL << 32)) throw CheckpointError("tensor '" + t.name + "' has implausible extent");
      t.shape.push_back(static_cast<Index>(d));
      numel *= d;
    }
    t.dtype = r.get<std::uint8_t>();
    if (t.dtype == 1) {
      const auto* p = r.take(numel * sizeof(float));
      t.values.resize(numel);
      for (std::uint64_t j = 0; j < numel; ++j) {
        float v;
        std::memcpy(&v, p + j * sizeof(float), sizeof(float));
        t.values[j] = v;
      }
    } else if (t.dtype == 2) {
      const auto* p = r.take(numel * sizeof(double));
      t.values.resize(numel);
      std::memcpy(t.values.data(), p, numel * sizeof(double));
    } else {
      throw CheckpointError("tensor '" + t.name + "' has unknown dtype code " + std::to_string(t.dtype));
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>& params,
                                               const std::vector<CheckpointSection>& sections) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  std::vector<std::pair<std::string, Tensor<T>>> named;
  for (const auto& p : params.items()) named.emplace_back(p.name, p.tensor);
  const auto body = encode_tensors(named);
  out.insert(out.end(), body.begin(), body.end());
  for (const auto& s : sections) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.tag.size()));
    put_bytes(out, s.tag.data(), s.tag.size());
    put<std::uint64_t>(out, s.payload.size());
    out.insert(out.end(), s.payload.begin(), s.payload.end());
  }
  return out;
}

template <typename T>
std::vector<CheckpointSection> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                                      ParameterSet<T>& params) {
  std::size_t off = 0;
  Reader r(bytes, off);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto stored = decode_tensors(bytes, off);

  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : stored)
    if (!by_name.emplace(t.name, &t).second) throw CheckpointError("duplicate tensor '" + t.name + "'");
  std::string missing, extra;
  for (const auto& p : params.items())
    if (!by_name.count(p.name)) missing += " " + p.name;
  for (const auto& [name, _] : by_name)
    if (!params.contains(name)) extra += " " + name;
  if (!missing.empty() || !extra.empty()) {
    throw CheckpointError("checkpoint names do not match the architecture; missing:" + (missing.empty() ? " none" : missing) +
                          "; unexpected:" + (extra.empty() ? " none" : extra));
  }
  for (auto& p : params.items()) {
    const StoredTensor& s = *by_name.at(p.name);
    if (s.shape != p.tensor.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(s.shape) + ", expected " +
                            shape_str(p.tensor.shape()));
    }
  }
  for (auto& p : params.items()) {
    const StoredTensor& s = *by_name.at(p.name);
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s.values[i]);
  }

  std::vector<CheckpointSection> sections;
  while (!r.done()) {
    CheckpointSection s;
    s.tag = r.str(r.get<std::uint32_t>());
    const auto n = r.get<std::uint64_t>();
    const auto* p = r.take(n);
    s.payload.assign(p, p + n);
    sections.push_back(std::move(s));
  }
  return sections;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const std::vector<CheckpointSection>& sections) {
  write_file_bytes(path, serialize_checkpoint(params, sections));
}

template <typename T>
std::vector<CheckpointSection> load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
  return deserialize_checkpoint(read_file_bytes(path), params);
}

#define AEM_CKPT_INSTANTIATE(T)                                                                                  \
  template std::vector<std::uint8_t> encode_tensors(const std::vector<std::pair<std::string, Tensor<T>>>&);      \
  template std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>&,                                \
                                                          const std::vector<CheckpointSection>&);               \
  template std::vector<CheckpointSection> deserialize_checkpoint(const std::vector<std::uint8_t>&, ParameterSet<T>&); \
  template void save_checkpoint(const std::filesystem::path&, const ParameterSet<T>&,                            \
                                const std::vector<CheckpointSection>&);                                          \
  template std::vector<CheckpointSection> load_checkpoint(const std::filesystem::path&, ParameterSet<T>&);

AEM_CKPT_INSTANTIATE(float)
AEM_CKPT_INSTANTIATE(double)

}  // namespace aem
