#include "tgavc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "tgavc/errors.hpp"

namespace tgavc::checkpoint {
namespace {

constexpr char kMagic[8] = {'T', 'G', 'A', 'V', 'C', 'C', 'K', '1'};

template <typename T>
void put_raw(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void take_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Archive& a) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_raw<std::uint32_t>(out, kFormatVersion);
  put_raw<std::uint64_t>(out, a.metadata.size());
  out.insert(out.end(), a.metadata.begin(), a.metadata.end());
  put_raw<std::uint64_t>(out, a.tensors.size());
  for (const auto& [key, m] : a.tensors) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out.insert(out.end(), key.begin(), key.end());
    put_raw<std::int64_t>(out, m.rows());
    put_raw<std::int64_t>(out, m.cols());
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    const auto* p = reinterpret_cast<const std::uint8_t*>(rm.data());
    out.insert(out.end(), p, p + rm.size() * sizeof(float));
  }
  return out;
}

Archive deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad format tag)");
  Reader r(bytes);
  r.take_string(8);
  const auto version = r.take<std::uint32_t>();
  if (version != kFormatVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kFormatVersion) + ")");
  Archive a;
  a.metadata = r.take_string(r.take<std::uint64_t>());
  const auto count = r.take<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string key = r.take_string(r.take<std::uint32_t>());
    const auto rows = r.take<std::int64_t>();
    const auto cols = r.take<std::int64_t>();
    if (rows < 0 || cols < 0) throw CheckpointError("checkpoint tensor '" + key + "' has a negative shape");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.take_floats(rm.data(), static_cast<std::size_t>(rows * cols));
    a.tensors.emplace(std::move(key), Eigen::MatrixXf(rm));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return a;
}

void write(const std::filesystem::path& path, const Archive& a) {
  const std::vector<std::uint8_t> bytes = serialize(a);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot write checkpoint: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FileError("failed writing checkpoint: " + path.string());
}

Archive read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot read checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void put(Archive& a, const std::string& prefix, const ParamStore<float>& store) {
  for (int i = 0; i < store.size(); ++i) a.tensors[prefix + "/" + store.name(i)] = store.value(i);
}

void get(const Archive& a, const std::string& prefix, ParamStore<float>& store) {
  for (int i = 0; i < store.size(); ++i) {
    const std::string key = prefix + "/" + store.name(i);
    auto it = a.tensors.find(key);
    if (it == a.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + key + "'");
    if (it->second.rows() != store.value(i).rows() || it->second.cols() != store.value(i).cols())
      throw CheckpointError("checkpoint tensor '" + key + "' has shape " + std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", model expects " + std::to_string(store.value(i).rows()) +
                            "x" + std::to_string(store.value(i).cols()));
    store.value(i) = it->second;
  }
}

bool has_prefix(const Archive& a, const std::string& prefix) {
  auto it = a.tensors.lower_bound(prefix + "/");
  return it != a.tensors.end() && it->first.starts_with(prefix + "/");
}

void put(Archive& a, const std::string& prefix, const optim::AdamState<float>& state, const ParamStore<float>& store) {
  if (state.m.empty()) return;
  for (int i = 0; i < store.size(); ++i) {
    a.tensors[prefix + "/m/" + store.name(i)] = state.m[i];
    a.tensors[prefix + "/v/" + store.name(i)] = state.v[i];
  }
}

void get(const Archive& a, const std::string& prefix, optim::AdamState<float>& state, const ParamStore<float>& store) {
  state.m.clear();
  state.v.clear();
  if (!has_prefix(a, prefix)) return;
  for (int i = 0; i < store.size(); ++i) {
    auto m = a.tensors.find(prefix + "/m/" + store.name(i));
    auto v = a.tensors.find(prefix + "/v/" + store.name(i));
    if (m == a.tensors.end() || v == a.tensors.end())
      throw CheckpointError("checkpoint is missing optimizer moments for '" + prefix + "/" + store.name(i) + "'");
    if (m->second.rows() != store.value(i).rows() || m->second.cols() != store.value(i).cols())
      throw CheckpointError("optimizer moments for '" + store.name(i) + "' have the wrong shape");
    state.m.push_back(m->second);
    state.v.push_back(v->second);
  }
}

}  // namespace tgavc::checkpoint
