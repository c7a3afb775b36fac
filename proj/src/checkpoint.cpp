// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "mitodet/hash.hpp"

namespace mitodet {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'D', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void doubles(const std::vector<double>& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size() * sizeof(double));
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: record overruns payload");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kTranslation: return "translation";
    case Stage::kDetector: return "detector";
    case Stage::kClassifier: return "classifier";
  }
  return "unknown";
}

std::size_t TrainingHistory::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::out_of_range("history has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> TrainingHistory::series(const std::string& name) const {
  const auto c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.at(c));
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint32_t>(ckpt.stage));
  w.pod(ckpt.epoch);
  w.str(ckpt.config_json);
  w.pod(static_cast<std::uint32_t>(ckpt.history.columns.size()));
  for (const auto& c : ckpt.history.columns) w.str(c);
  w.pod(static_cast<std::uint32_t>(ckpt.history.rows.size()));
  for (const auto& r : ckpt.history.rows) {
    if (r.size() != ckpt.history.columns.size()) {
      throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: history row width mismatch");
    }
    w.doubles(r);
  }
  w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != t.shape.size()) {
      throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: tensor '" + t.name + "' size mismatch");
    }
    w.str(t.name);
    w.pod(static_cast<std::int32_t>(t.shape.c));
    w.pod(static_cast<std::int32_t>(t.shape.h));
    w.pod(static_cast<std::int32_t>(t.shape.w));
    w.doubles(t.values);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc_of(bytes.data(), bytes.size());
  w.pod(crc);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::kIo, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::kMagic, "not a mitodet checkpoint: " + path.string());
  }
  if (bytes.size() < sizeof(kMagic) + 2 * sizeof(std::uint32_t)) {
    throw CheckpointError(CheckpointError::Kind::kChecksum, "checkpoint truncated: " + path.string());
  }
  const std::size_t payload = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload, sizeof(stored));
  if (crc_of(bytes.data(), payload) != stored) {
    throw CheckpointError(CheckpointError::Kind::kChecksum, "checkpoint checksum mismatch (corrupt or truncated): " +
                                                                path.string());
  }

  Reader r(bytes.data() + sizeof(kMagic), payload - sizeof(kMagic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto stage = r.pod<std::uint32_t>();
  if (stage < 1 || stage > 3) throw CheckpointError(CheckpointError::Kind::kFormat, "unknown stage tag");
  ck.stage = static_cast<Stage>(stage);
  ck.epoch = r.pod<std::uint64_t>();
  ck.config_json = r.str();
  const auto ncols = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ncols; ++i) ck.history.columns.push_back(r.str());
  const auto nrows = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nrows; ++i) ck.history.rows.push_back(r.doubles(ncols));
  const auto ntensors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    t.shape.c = r.pod<std::int32_t>();
    t.shape.h = r.pod<std::int32_t>();
    t.shape.w = r.pod<std::int32_t>();
    if (t.shape.c <= 0 || t.shape.h <= 0 || t.shape.w <= 0) {
      throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: bad tensor shape for '" + t.name + "'");
    }
    t.values = r.doubles(t.shape.size());
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected) {
  auto ck = load_checkpoint(path);
  if (ck.stage != expected) {
    throw CheckpointError(CheckpointError::Kind::kStage, std::string("checkpoint stage mismatch: file holds a ") +
                                                             stage_name(ck.stage) + " model, expected " +
                                                             stage_name(expected));
  }
  return ck;
}

std::vector<NamedTensor> export_params(const nn::ParamList& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& [name, v] : params) out.push_back({name, v->shape, v->value});
  return out;
}

void import_params(const nn::ParamList& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (const auto& [name, v] : params) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint lacks tensor '" + name + "'");
    if (!(it->second->shape == v->shape)) {
      throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint tensor '" + name + "' has a different shape");
    }
    v->value = it->second->values;
  }
}

std::uint64_t params_fingerprint(const nn::ParamList& params) {
  Fnv1a h;
  for (const auto& [name, v] : params) {
    h.update(name);
    h.update(v->value.data(), v->value.size() * sizeof(double));
  }
  return h.digest();
}

}  // namespace mitodet
