// Copyright 2026 The APDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "apdt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include <json.hpp>
#include <zlib.h>

#include "apdt/file_util.hpp"

namespace apdt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'A', 'P', 'D', 'T', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void put_tensors(std::string& out, const ModelParams& p) {
  p.for_each([&](std::string_view name, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  });
}

void get_tensors(Reader& in, ModelParams& p) {
  p.for_each([&](std::string_view name, Tensor& t) {
    const auto len = in.get<std::uint32_t>();
    const std::string stored = in.get_string(len);
    if (stored != name) {
      throw std::runtime_error("checkpoint: expected tensor '" + std::string(name) + "', found '" +
                               stored + "'");
    }
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    if (rows != t.rows() || cols != t.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for tensor '" + stored + "'");
    }
    in.get_doubles(t.data(), t.size());
  });
}

json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"d_k", c.d_k},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"context_window", c.context_window}, {"prompt_len", c.prompt_len},
          {"u_max", c.u_max},           {"encoder", to_string(c.encoder)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.d_k = j.at("d_k").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.context_window = j.at("context_window").get<int>();
  c.prompt_len = j.at("prompt_len").get<int>();
  c.u_max = j.at("u_max").get<int>();
  c.encoder = state_encoder_from_string(j.at("encoder").get<std::string>());
  return c;
}

}  // namespace

std::string encode_checkpoint(const Model& model, const TrainerState* trainer) {
  json header;
  header["model"] = config_to_json(model.config);
  header["norm"] = {{"pos_x", model.norm.pos_x}, {"pos_y", model.norm.pos_y},
                    {"aoi", model.norm.aoi},     {"ret", model.norm.ret},
                    {"cost", model.norm.cost}};
  header["seed"] = model.seed;
  header["has_trainer"] = trainer != nullptr;
  if (trainer) {
    header["trainer"] = {{"step", trainer->step},
                         {"opt_t", trainer->opt.t},
                         {"rng_state", trainer->rng_state},
                         {"loss_history", trainer->loss_history}};
  }
  const std::string head = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, head.size());
  out += head;
  put_tensors(out, model.params);
  if (trainer) {
    put_tensors(out, trainer->opt.m);
    put_tensors(out, trainer->opt.v);
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  put<std::uint32_t>(out, crc);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8 + 4) throw std::runtime_error("checkpoint: too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  if (crc != stored_crc) throw std::runtime_error("checkpoint: checksum mismatch (corrupt file)");

  Reader in(bytes, body);
  if (in.get_string(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto head_len = in.get<std::uint64_t>();
  const json header = json::parse(in.get_string(head_len));

  Checkpoint ck;
  ck.model.config = config_from_json(header.at("model"));
  validate(ck.model.config);
  const auto& jn = header.at("norm");
  ck.model.norm = {jn.at("pos_x").get<double>(), jn.at("pos_y").get<double>(),
                   jn.at("aoi").get<double>(), jn.at("ret").get<double>(),
                   jn.at("cost").get<double>()};
  ck.model.seed = header.at("seed").get<std::uint64_t>();
  ck.model.params = init_params(ck.model.config, 0);
  get_tensors(in, ck.model.params);

  if (header.at("has_trainer").get<bool>()) {
    const auto& jt = header.at("trainer");
    TrainerState ts;
    ts.step = jt.at("step").get<std::uint64_t>();
    ts.opt.t = jt.at("opt_t").get<std::uint64_t>();
    ts.rng_state = jt.at("rng_state").get<std::string>();
    ts.loss_history = jt.at("loss_history").get<std::vector<double>>();
    ts.opt.m = zeros_like(ck.model.params);
    ts.opt.v = zeros_like(ck.model.params);
    get_tensors(in, ts.opt.m);
    get_tensors(in, ts.opt.v);
    ck.trainer = std::move(ts);
  }
  if (in.pos() != body) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainerState* trainer) {
  write_file_atomic(path, encode_checkpoint(model, trainer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace apdt
