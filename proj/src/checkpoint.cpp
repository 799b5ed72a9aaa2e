#include "metagp/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "metagp/errors.hpp"

namespace metagp::ckpt {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "metagp-checkpoint";
constexpr int kVersion = 1;

json matrix_to_json(const ad::Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = std::move(data);
  return j;
}

ad::Matrix matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ConfigError("checkpoint matrix has " + std::to_string(data.size()) +
                      " entries for shape " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  ad::Matrix m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
  }
  return m;
}

json mlp_to_json(const nn::MlpParams& p) {
  json j;
  j["widths"] = p.spec.widths;
  j["output"] =
      p.spec.output == nn::OutputTransform::kSoftplusPositive ? "softplus" : "identity";
  j["dropout"] = p.spec.dropout;
  json w = json::array(), b = json::array();
  for (const ad::Matrix& m : p.weights) w.push_back(matrix_to_json(m));
  for (const ad::Matrix& m : p.biases) b.push_back(matrix_to_json(m));
  j["weights"] = std::move(w);
  j["biases"] = std::move(b);
  return j;
}

nn::MlpParams mlp_from_json(const json& j) {
  nn::MlpParams p;
  p.spec.widths = j.at("widths").get<std::vector<int>>();
  const std::string output = j.at("output").get<std::string>();
  if (output == "softplus") {
    p.spec.output = nn::OutputTransform::kSoftplusPositive;
  } else if (output == "identity") {
    p.spec.output = nn::OutputTransform::kIdentity;
  } else {
    throw ConfigError("unknown output transform in checkpoint: " + output);
  }
  p.spec.dropout = j.at("dropout").get<double>();
  p.spec.validate();
  for (const json& m : j.at("weights")) p.weights.push_back(matrix_from_json(m));
  for (const json& m : j.at("biases")) p.biases.push_back(matrix_from_json(m));
  const std::size_t layers = p.spec.widths.size() - 1;
  if (p.weights.size() != layers || p.biases.size() != layers) {
    throw ConfigError("checkpoint network has " + std::to_string(p.weights.size()) +
                      " weight blocks for " + std::to_string(layers) + " layers");
  }
  return p;
}

std::string mode_name(gp::AblationMode mode) {
  switch (mode) {
    case gp::AblationMode::kFull: return "full";
    case gp::AblationMode::kNoSptMean: return "no_spt_mean";
    case gp::AblationMode::kZeroMean: return "zero_mean";
  }
  throw ConfigError("unknown ablation mode");
}

gp::AblationMode mode_from_name(const std::string& name) {
  if (name == "full") return gp::AblationMode::kFull;
  if (name == "no_spt_mean") return gp::AblationMode::kNoSptMean;
  if (name == "zero_mean") return gp::AblationMode::kZeroMean;
  throw ConfigError("unknown ablation mode in checkpoint: " + name);
}

json ours_to_json(const gp::ModelParams& p) {
  json h;
  h["aux_dims"] = p.hyper.aux_dims;
  h["latent_k"] = p.hyper.latent_k;
  h["width"] = p.hyper.width;
  h["dropout"] = p.hyper.dropout;
  h["mode"] = mode_name(p.hyper.mode);
  h["delta_in_cross"] = p.hyper.delta_in_cross;
  json j;
  j["hyper"] = std::move(h);
  j["f_z"] = mlp_to_json(p.f_z);
  j["f_m"] = mlp_to_json(p.f_m);
  j["f_k"] = mlp_to_json(p.f_k);
  j["f_b"] = mlp_to_json(p.f_b);
  return j;
}

gp::ModelParams ours_from_json(const json& j) {
  gp::ModelParams p;
  const json& h = j.at("hyper");
  p.hyper.aux_dims = h.at("aux_dims").get<int>();
  p.hyper.latent_k = h.at("latent_k").get<int>();
  p.hyper.width = h.at("width").get<int>();
  p.hyper.dropout = h.at("dropout").get<double>();
  p.hyper.mode = mode_from_name(h.at("mode").get<std::string>());
  p.hyper.delta_in_cross = h.at("delta_in_cross").get<bool>();
  p.f_z = mlp_from_json(j.at("f_z"));
  p.f_m = mlp_from_json(j.at("f_m"));
  p.f_k = mlp_from_json(j.at("f_k"));
  p.f_b = mlp_from_json(j.at("f_b"));
  return p;
}

json record_to_json(const NormEntry& e) {
  json j;
  j["region_id"] = e.region_id;
  j["attribute_id"] = e.attribute_id;
  j["loc_mean"] = e.record.loc_mean;
  j["loc_std"] = e.record.loc_std;
  j["y_mean"] = e.record.y_mean;
  j["y_std"] = e.record.y_std;
  j["y_normalized"] = e.record.y_normalized;
  j["degenerate"] = e.record.degenerate;
  return j;
}

NormEntry record_from_json(const json& j) {
  NormEntry e;
  e.region_id = j.at("region_id").get<std::string>();
  e.attribute_id = j.at("attribute_id").get<std::string>();
  e.record.loc_mean = j.at("loc_mean").get<std::vector<double>>();
  e.record.loc_std = j.at("loc_std").get<std::vector<double>>();
  e.record.y_mean = j.at("y_mean").get<double>();
  e.record.y_std = j.at("y_std").get<double>();
  e.record.y_normalized = j.at("y_normalized").get<bool>();
  e.record.degenerate = j.at("degenerate").get<bool>();
  return e;
}

}  // namespace

Checkpoint snapshot(const EpisodicModel& model) {
  Checkpoint c;
  c.kind = model.kind();
  if (const auto* ours = dynamic_cast<const OursModel*>(&model)) {
    c.ours = ours->params();
  } else if (const auto* gpr = dynamic_cast<const bl::GprModel*>(&model)) {
    c.gpr = gpr->params();
  } else if (const auto* np = dynamic_cast<const bl::NpModel*>(&model)) {
    c.np = np->params();
  } else if (const auto* ft = dynamic_cast<const bl::FtModel*>(&model)) {
    c.nn = ft->params();
    c.ft_epochs = ft->epochs();
    c.ft_lr = ft->lr();
  } else if (const auto* plain = dynamic_cast<const bl::NnModel*>(&model)) {
    c.nn = plain->params();
  } else {
    throw ConfigError("cannot checkpoint model kind: " + model.kind());
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  json j;
  j["format"] = kFormatTag;
  j["version"] = kVersion;
  j["kind"] = checkpoint.kind;
  if (checkpoint.kind == "ours") {
    j["ours"] = ours_to_json(checkpoint.ours);
  } else if (checkpoint.kind == "gpr") {
    json g;
    g["log_signal"] = checkpoint.gpr.log_signal;
    g["log_length"] = checkpoint.gpr.log_length;
    g["log_noise"] = checkpoint.gpr.log_noise;
    j["gpr"] = std::move(g);
  } else if (checkpoint.kind == "np") {
    json n;
    n["encoder"] = mlp_to_json(checkpoint.np.encoder);
    n["decoder"] = mlp_to_json(checkpoint.np.decoder);
    n["variance_head"] = checkpoint.np.variance_head;
    j["np"] = std::move(n);
  } else if (checkpoint.kind == "nn" || checkpoint.kind == "ft") {
    json n;
    n["net"] = mlp_to_json(checkpoint.nn.net);
    j["nn"] = std::move(n);
    if (checkpoint.kind == "ft") {
      j["ft_epochs"] = checkpoint.ft_epochs;
      j["ft_lr"] = checkpoint.ft_lr;
    }
  } else {
    throw ConfigError("cannot save checkpoint of kind: " + checkpoint.kind);
  }
  json records = json::array();
  for (const NormEntry& e : checkpoint.norm_records) records.push_back(record_to_json(e));
  j["norm_records"] = std::move(records);

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint is not valid JSON: " + path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormatTag) {
      throw ConfigError("not a model checkpoint: " + path);
    }
    if (j.at("version").get<int>() != kVersion) {
      throw ConfigError("unsupported checkpoint version " +
                        std::to_string(j.at("version").get<int>()));
    }
    Checkpoint c;
    c.kind = j.at("kind").get<std::string>();
    if (c.kind == "ours") {
      c.ours = ours_from_json(j.at("ours"));
    } else if (c.kind == "gpr") {
      const json& g = j.at("gpr");
      c.gpr.log_signal = g.at("log_signal").get<double>();
      c.gpr.log_length = g.at("log_length").get<double>();
      c.gpr.log_noise = g.at("log_noise").get<double>();
    } else if (c.kind == "np") {
      const json& n = j.at("np");
      c.np.encoder = mlp_from_json(n.at("encoder"));
      c.np.decoder = mlp_from_json(n.at("decoder"));
      c.np.variance_head = n.at("variance_head").get<bool>();
    } else if (c.kind == "nn" || c.kind == "ft") {
      c.nn.net = mlp_from_json(j.at("nn").at("net"));
      if (c.kind == "ft") {
        c.ft_epochs = j.at("ft_epochs").get<int>();
        c.ft_lr = j.at("ft_lr").get<double>();
      }
    } else {
      throw ConfigError("unknown model kind in checkpoint: " + c.kind);
    }
    for (const json& e : j.at("norm_records")) c.norm_records.push_back(record_from_json(e));
    return c;
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint " + path + ": " + e.what());
  }
}

std::unique_ptr<EpisodicModel> make_model(const Checkpoint& checkpoint) {
  if (checkpoint.kind == "ours") return std::make_unique<OursModel>(checkpoint.ours);
  if (checkpoint.kind == "gpr") return std::make_unique<bl::GprModel>(checkpoint.gpr);
  if (checkpoint.kind == "np") return std::make_unique<bl::NpModel>(checkpoint.np);
  if (checkpoint.kind == "nn") return std::make_unique<bl::NnModel>(checkpoint.nn);
  if (checkpoint.kind == "ft") {
    return std::make_unique<bl::FtModel>(checkpoint.nn, checkpoint.ft_epochs,
                                         checkpoint.ft_lr);
  }
  throw ConfigError("unknown model kind in checkpoint: " + checkpoint.kind);
}

const data::NormRecord& find_record(const Checkpoint& checkpoint, const std::string& region_id,
                                    const std::string& attribute_id) {
  for (const NormEntry& e : checkpoint.norm_records) {
    if (e.region_id == region_id && e.attribute_id == attribute_id) return e.record;
  }
  throw ConfigError("checkpoint has no normalization record for (" + region_id + ", " +
                    attribute_id + ")");
}

}  // namespace metagp::ckpt
