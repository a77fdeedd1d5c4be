#include "deviloc/diffkernel/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "deviloc/error.h"
#include "deviloc/hashing.h"

namespace deviloc::dk {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'V', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void Put(std::string* out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out->append(bytes, sizeof(T));
}

std::string TensorBytes(const Matrix& m) {
  std::string bytes;
  bytes.reserve(m.size() * sizeof(double));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) Put(&bytes, m(r, c));
  }
  return bytes;
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T Get() {
    Need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string Bytes(size_t n) {
    Need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool AtEnd() const { return pos_ == data_.size(); }

 private:
  void Need(size_t n) const {
    if (data_.size() - pos_ < n) {
      Throw(ErrorCode::kParseError, path_ + ": truncated checkpoint");
    }
  }
  std::string data_;
  std::string path_;
  size_t pos_ = 0;
};

std::string Serialize(const ParameterSet& params, const std::string& config_json) {
  std::string out(kMagic, sizeof(kMagic));
  Put<uint32_t>(&out, kCheckpointVersion);
  Put<uint64_t>(&out, config_json.size());
  out += config_json;
  Put<uint64_t>(&out, params.size());
  for (const auto& [name, p] : params) {
    Put<uint32_t>(&out, static_cast<uint32_t>(name.size()));
    out += name;
    Put<uint64_t>(&out, p.value.rows());
    Put<uint64_t>(&out, p.value.cols());
    out += TensorBytes(p.value);
  }
  return out;
}

void WriteFile(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) Throw(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace

void SaveCheckpoint(const ParameterSet& params, const std::string& config_json,
                    const std::filesystem::path& path) {
  WriteFile(path, Serialize(params, config_json));
}

void SaveCheckpointWithManifest(const ParameterSet& params,
                                const std::string& config_json,
                                const std::filesystem::path& path) {
  const std::string bytes = Serialize(params, config_json);
  WriteFile(path, bytes);
  std::filesystem::path manifest = path;
  manifest += ".manifest";
  WriteFile(manifest, FormatManifest(params, Sha256Hex(bytes)));
}

std::string FormatManifest(const ParameterSet& params,
                           const std::string& file_sha256) {
  std::ostringstream out;
  out << "checkpoint " << file_sha256 << '\n';
  for (const auto& [name, p] : params) {
    out << name << ' ' << p.value.rows() << ' ' << p.value.cols() << ' '
        << Sha256Hex(TensorBytes(p.value)) << '\n';
  }
  return out.str();
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Throw(ErrorCode::kIoError, "cannot read " + path.string());
  Reader reader(std::string((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>()),
                path.string());
  if (reader.Bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    Throw(ErrorCode::kParseError, path.string() + ": not a checkpoint file");
  }
  const uint32_t version = reader.Get<uint32_t>();
  if (version != kCheckpointVersion) {
    Throw(ErrorCode::kParseError, path.string() + ": unsupported checkpoint version " +
                                      std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_json = reader.Bytes(reader.Get<uint64_t>());
  const uint64_t count = reader.Get<uint64_t>();
  for (uint64_t t = 0; t < count; ++t) {
    const std::string name = reader.Bytes(reader.Get<uint32_t>());
    const uint64_t rows = reader.Get<uint64_t>();
    const uint64_t cols = reader.Get<uint64_t>();
    Matrix value(rows, cols);
    for (uint64_t r = 0; r < rows; ++r) {
      for (uint64_t c = 0; c < cols; ++c) value(r, c) = reader.Get<double>();
    }
    ckpt.params.Add(name, std::move(value));
  }
  if (!reader.AtEnd()) {
    Throw(ErrorCode::kParseError, path.string() + ": trailing bytes in checkpoint");
  }
  return ckpt;
}

void LoadInto(const ParameterSet& source, ParameterSet* target) {
  if (source.size() != target->size()) {
    Throw(ErrorCode::kShapeMismatch,
          "checkpoint has " + std::to_string(source.size()) +
              " tensors, model expects " + std::to_string(target->size()));
  }
  for (auto& [name, p] : *target) {
    if (!source.Contains(name)) {
      Throw(ErrorCode::kShapeMismatch, "checkpoint lacks tensor " + name);
    }
    const Matrix& value = source.Get(name).value;
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
      Throw(ErrorCode::kShapeMismatch, "tensor " + name + " has the wrong shape");
    }
    p.value = value;
  }
}

}  // namespace deviloc::dk
