#include "hypevents/pipeline/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "hypevents/core/error.hpp"

namespace hypevents::pipeline {

std::string to_string(ModelKind kind) { return kind == ModelKind::lm ? "lm" : "mtl"; }

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, std::string_view s, bool wide) {
  if (wide) {
    put_le<std::uint64_t>(out, s.size());
  } else {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  }
  out.append(s);
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::uint64_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCode::truncated, source_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <typename Params>
std::vector<NamedTensor> named(const Params& params) {
  std::vector<NamedTensor> out;
  for (const Parameter* p : params) out.push_back({p->name, p->value});
  return out;
}

void assign(std::vector<Parameter*> params, const std::vector<NamedTensor>& tensors, const std::string& kind) {
  if (params.size() != tensors.size()) {
    throw Error(ErrorCode::schema, kind + " checkpoint holds " + std::to_string(tensors.size()) +
                                       " tensors, the configured model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != tensors[i].name || params[i]->value.shape() != tensors[i].value.shape()) {
      throw Error(ErrorCode::schema, kind + " checkpoint tensor '" + tensors[i].name + "' " +
                                         hypevents::to_string(tensors[i].value.shape()) + " does not match '" +
                                         params[i]->name + "' " + hypevents::to_string(params[i]->value.shape()));
    }
    params[i]->value = tensors[i].value;
    params[i]->zero_grad();
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  out.push_back(static_cast<char>(c.kind));
  put_string(out, c.config, true);
  put_string(out, c.vocab, true);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const NamedTensor& t : c.tensors) {
    put_string(out, t.name, false);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    if (bytes.size() < kCheckpointMagic.size() && kCheckpointMagic.substr(0, bytes.size()) == bytes) {
      throw Error(ErrorCode::truncated, source + ": truncated inside the header");
    }
    throw Error(ErrorCode::bad_magic, source + ": not a checkpoint (bad magic)");
  }
  Reader r(bytes.substr(kCheckpointMagic.size()), source);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::version_mismatch, source + ": format version " + std::to_string(version) +
                                                 ", this build reads version " +
                                                 std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  const auto kind = r.le<std::uint8_t>();
  if (kind > 1) throw Error(ErrorCode::schema, source + ": unknown model kind " + std::to_string(kind));
  c.kind = static_cast<ModelKind>(kind);
  c.config = std::string(r.take(r.le<std::uint64_t>()));
  c.vocab = std::string(r.take(r.le<std::uint64_t>()));
  const auto n = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = std::string(r.take(r.le<std::uint32_t>()));
    const auto rank = r.le<std::uint32_t>();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
    const std::size_t numel = shape_numel(shape);
    if (numel > r.remaining() / 8) throw Error(ErrorCode::truncated, source + ": truncated in tensor " + t.name);
    std::vector<double> data(numel);
    for (double& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    t.value = Tensor(std::move(shape), std::move(data));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::truncated, source + ": unexpected bytes after the last tensor");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, ModelKind expected) {
  Checkpoint c = load_checkpoint(path);
  if (c.kind != expected) {
    throw Error(ErrorCode::kind_mismatch, path.string() + " holds a " + to_string(c.kind) + " model, expected " +
                                              to_string(expected));
  }
  return c;
}

Checkpoint make_checkpoint(const lm::LmModel& model, const RunConfig& config, const text::Vocab& vocab) {
  return {ModelKind::lm, config.to_text(), vocab.serialize(), named(model.parameters())};
}

Checkpoint make_checkpoint(const mtl::MtlModel& model, const RunConfig& config, const text::Vocab& vocab) {
  return {ModelKind::mtl, config.to_text(), vocab.serialize(), named(model.parameters())};
}

Restored<lm::LmModel> restore_lm(const Checkpoint& c) {
  if (c.kind != ModelKind::lm) throw Error(ErrorCode::kind_mismatch, "expected an lm checkpoint");
  RunConfig config = RunConfig::parse(c.config);
  text::Vocab vocab = text::Vocab::parse(c.vocab);
  lm::LmModel model(config.lm_config(), vocab.size());
  assign(model.parameters(), c.tensors, "lm");
  return {std::move(model), std::move(config), std::move(vocab)};
}

Restored<mtl::MtlModel> restore_mtl(const Checkpoint& c) {
  if (c.kind != ModelKind::mtl) throw Error(ErrorCode::kind_mismatch, "expected an mtl checkpoint");
  RunConfig config = RunConfig::parse(c.config);
  text::Vocab vocab = text::Vocab::parse(c.vocab);
  mtl::MtlModel model(config.mtl_config(), vocab.size());
  assign(model.parameters(), c.tensors, "mtl");
  return {std::move(model), std::move(config), std::move(vocab)};
}

}  // namespace hypevents::pipeline
