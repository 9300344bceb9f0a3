#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbcd/model.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Model file container.
//
// Layout (all integers and array payloads little-endian):
//   bytes 0..7   magic "DBCDML01" (carries the format version)
//   u32          precision in bytes (4 = float32, 8 = float64)
//   u32          model count (1 for binary/regression, C for one-vs-rest)
//   u64          metadata length
//   ...          metadata (JSON, includes the array manifest)
//   ...          raw array payloads, row-major, in manifest order
//
// Every float array is stored at the model's working precision, so a
// save/load round trip is bit-exact.
// =========================================================================

inline constexpr char kModelMagic[9] = "DBCDML01";

namespace detail {

inline void require_little_endian() {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  if constexpr (std::endian::native != std::endian::little)
    throw data_error("model files require a little-endian host");
}

template <typename T>
void append_array(nlohmann::json& manifest, std::vector<std::pair<const T*, std::size_t>>& payloads,
                  const std::string& name, const T* data, Index rows, Index cols) {
  manifest.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
  payloads.emplace_back(data, static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
}

inline nlohmann::json loss_to_json(const LossKind& k) {
  nlohmann::json j;
  j["family"] = loss_name(k.family);
  j["p"] = k.p;
  j["delta"] = k.delta;
  j["eps_ins"] = k.eps_ins;
  return j;
}

inline LossKind loss_from_json(const nlohmann::json& j) {
  const std::string f = j.at("family");
  if (f == "square") return LossKind::square();
  if (f == "lp") return LossKind::lp(j.at("p").get<double>());
  if (f == "l1") return LossKind::l1();
  if (f == "huber") return LossKind::huber(j.at("delta").get<double>());
  if (f == "svr") return LossKind::svr(j.at("eps_ins").get<double>());
  if (f == "hinge") return LossKind::hinge();
  if (f == "squared_hinge") return LossKind::squared_hinge();
  if (f == "logistic") return LossKind::logistic();
  throw data_error("unknown loss family '" + f + "' in model file");
}

}  // namespace detail

template <typename T>
void save_model(const OvrModel<T>& bundle, const std::string& path) {
  detail::require_little_endian();
  if (bundle.models.empty()) throw data_error("save_model: empty bundle");
  nlohmann::json meta;
  meta["format"] = 1;
  meta["precision"] = sizeof(T) == 4 ? "float32" : "float64";
  meta["class_labels"] = bundle.class_labels;
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<std::pair<const T*, std::size_t>> payloads;
  nlohmann::json models = nlohmann::json::array();
  // W and train_X are serialized row-major; keep the converted copies alive
  // until the payloads are flushed
  std::vector<RowMatrix<T>> row_major_keep;
  row_major_keep.reserve(bundle.models.size());
  for (std::size_t k = 0; k < bundle.models.size(); ++k) {
    const TrainedModel<T>& m = bundle.models[k];
    const std::string tag = std::to_string(k);
    nlohmann::json jm;
    jm["loss"] = detail::loss_to_json(m.loss);
    jm["lambda"] = double(m.lambda);
    jm["mode"] = m.inexact ? "inexact" : "exact";
    jm["kernel"] = {{"family", kernel_name(m.kernel.family)}, {"sigma", m.kernel.sigma}};
    jm["seeds"] = {{"partition", m.seed_partition}, {"rff", m.seed_rff}};
    jm["iterations"] = m.iterations;
    if (m.final_gap)
      jm["final_gap"] = *m.final_gap;
    else
      jm["final_gap"] = nullptr;
    jm["class_label"] = m.class_label;
    jm["dim"] = m.inexact ? m.rff.input_dim() : m.train_X.cols();
    detail::append_array(arrays, payloads, "mean" + tag, m.norm.mean.data(), m.norm.mean.size(), 1);
    detail::append_array(arrays, payloads, "std" + tag, m.norm.stdev.data(), m.norm.stdev.size(), 1);
    if (m.inexact) {
      jm["rff"] = {{"M", m.rff.feature_dim()}, {"seed", m.rff.seed}};
      jm["n_train"] = 0;
      detail::append_array(arrays, payloads, "theta" + tag, m.theta.data(), m.theta.size(), 1);
      row_major_keep.emplace_back(m.rff.W);
      detail::append_array(arrays, payloads, "W" + tag, row_major_keep.back().data(),
                           m.rff.W.rows(), m.rff.W.cols());
      detail::append_array(arrays, payloads, "b" + tag, m.rff.b.data(), m.rff.b.size(), 1);
    } else {
      jm["rff"] = nullptr;
      jm["n_train"] = m.train_X.rows();
      detail::append_array(arrays, payloads, "alpha" + tag, m.alpha.data(), m.alpha.size(), 1);
      detail::append_array(arrays, payloads, "trainX" + tag, m.train_X.data(), m.train_X.rows(),
                           m.train_X.cols());
      detail::append_array(arrays, payloads, "trainy" + tag, m.train_y.data(), m.train_y.size(), 1);
    }
    models.push_back(std::move(jm));
  }
  meta["models"] = std::move(models);
  meta["arrays"] = std::move(arrays);
  const std::string js = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out.write(kModelMagic, 8);
  const std::uint32_t prec = sizeof(T);
  const std::uint32_t count = static_cast<std::uint32_t>(bundle.models.size());
  const std::uint64_t jlen = js.size();
  out.write(reinterpret_cast<const char*>(&prec), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(&jlen), 8);
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [ptr, count_elems] : payloads)
    out.write(reinterpret_cast<const char*>(ptr),
              static_cast<std::streamsize>(count_elems * sizeof(T)));
  if (!out) throw data_error("write failed for " + path);
}

template <typename T>
void save_model(const TrainedModel<T>& model, const std::string& path) {
  OvrModel<T> bundle;
  bundle.models.push_back(model);
  save_model(bundle, path);
}

struct ModelFileInfo {
  std::uint32_t precision_bytes = 0;
  std::uint32_t model_count = 0;
  nlohmann::json meta;
};

/// Read the header and metadata only; array payloads are validated by size
/// but not loaded.
inline ModelFileInfo inspect_model_file(const std::string& path) {
  detail::require_little_endian();
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw data_error("cannot open " + path);
  const std::uint64_t fsize = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  char magic[8];
  ModelFileInfo info;
  std::uint64_t jlen = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0)
    throw data_error(path + ": not a model file (bad magic/version)");
  in.read(reinterpret_cast<char*>(&info.precision_bytes), 4);
  in.read(reinterpret_cast<char*>(&info.model_count), 4);
  in.read(reinterpret_cast<char*>(&jlen), 8);
  if (!in || info.precision_bytes + jlen == 0 ||
      (info.precision_bytes != 4 && info.precision_bytes != 8))
    throw data_error(path + ": corrupt header");
  if (24 + jlen > fsize) throw data_error(path + ": truncated metadata");
  std::string js(jlen, '\0');
  in.read(js.data(), static_cast<std::streamsize>(jlen));
  if (!in) throw data_error(path + ": truncated metadata");
  try {
    info.meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": corrupt metadata: " + e.what());
  }
  std::uint64_t expect = 24 + jlen;
  for (const auto& a : info.meta.at("arrays"))
    expect += a.at("rows").get<std::uint64_t>() * a.at("cols").get<std::uint64_t>() *
              info.precision_bytes;
  if (expect != fsize)
    throw data_error(path + ": truncated or oversized payload (expected " +
                     std::to_string(expect) + " bytes, file has " + std::to_string(fsize) + ")");
  return info;
}

template <typename T>
OvrModel<T> load_model(const std::string& path) {
  const ModelFileInfo info = inspect_model_file(path);
  if (info.precision_bytes != sizeof(T))
    throw data_error(path + ": stored precision does not match the requested scalar type");
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  std::uint32_t prec = 0, count = 0;
  std::uint64_t jlen = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&prec), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  in.read(reinterpret_cast<char*>(&jlen), 8);
  in.seekg(static_cast<std::streamoff>(jlen), std::ios::cur);

  // payload reader keyed by manifest order
  auto read_array = [&](Index rows, Index cols, T* dst) {
    in.read(reinterpret_cast<char*>(dst),
            static_cast<std::streamsize>(std::size_t(rows) * std::size_t(cols) * sizeof(T)));
    if (!in) throw data_error(path + ": truncated array payload");
  };

  OvrModel<T> bundle;
  bundle.class_labels = info.meta.at("class_labels").get<std::vector<double>>();
  const auto& models = info.meta.at("models");
  const auto& arrays = info.meta.at("arrays");
  std::size_t ai = 0;
  auto next_dims = [&](const std::string& expect_name) {
    const auto& a = arrays.at(ai++);
    if (a.at("name").get<std::string>() != expect_name)
      throw data_error(path + ": unexpected array order (wanted " + expect_name + ")");
    return std::pair<Index, Index>(a.at("rows").get<Index>(), a.at("cols").get<Index>());
  };
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& jm = models[k];
    const std::string tag = std::to_string(k);
    TrainedModel<T> m;
    m.loss = detail::loss_from_json(jm.at("loss"));
    m.lambda = T(jm.at("lambda").get<double>());
    m.inexact = jm.at("mode").get<std::string>() == "inexact";
    m.kernel = KernelSpec(jm.at("kernel").at("family").get<std::string>() == "gaussian"
                              ? KernelFamily::gaussian
                              : KernelFamily::laplacian,
                          jm.at("kernel").at("sigma").get<double>());
    m.seed_partition = jm.at("seeds").at("partition").get<std::uint64_t>();
    m.seed_rff = jm.at("seeds").at("rff").get<std::uint64_t>();
    m.iterations = jm.at("iterations").get<std::uint64_t>();
    if (!jm.at("final_gap").is_null()) m.final_gap = jm.at("final_gap").get<double>();
    m.class_label = jm.at("class_label").get<double>();
    {
      auto [r, c] = next_dims("mean" + tag);
      m.norm.mean.resize(r);
      read_array(r, c, m.norm.mean.data());
    }
    {
      auto [r, c] = next_dims("std" + tag);
      m.norm.stdev.resize(r);
      read_array(r, c, m.norm.stdev.data());
    }
    if (m.inexact) {
      {
        auto [r, c] = next_dims("theta" + tag);
        m.theta.resize(r);
        read_array(r, c, m.theta.data());
      }
      {
        auto [r, c] = next_dims("W" + tag);
        RowMatrix<T> W(r, c);
        read_array(r, c, W.data());
        m.rff.W = W;
      }
      {
        auto [r, c] = next_dims("b" + tag);
        m.rff.b.resize(r);
        read_array(r, c, m.rff.b.data());
      }
      m.rff.family = m.kernel.family;
      m.rff.sigma = T(m.kernel.sigma);
      m.rff.seed = jm.at("rff").at("seed").get<std::uint64_t>();
    } else {
      {
        auto [r, c] = next_dims("alpha" + tag);
        m.alpha.resize(r);
        read_array(r, c, m.alpha.data());
      }
      {
        auto [r, c] = next_dims("trainX" + tag);
        m.train_X.resize(r, c);
        read_array(r, c, m.train_X.data());
      }
      {
        auto [r, c] = next_dims("trainy" + tag);
        m.train_y.resize(r);
        read_array(r, c, m.train_y.data());
      }
    }
    bundle.models.push_back(std::move(m));
  }
  return bundle;
}

inline int model_file_precision(const std::string& path) {
  return static_cast<int>(inspect_model_file(path).precision_bytes);
}

}  // namespace dbcd
