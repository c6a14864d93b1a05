#include "dr/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace dr {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

using json = nlohmann::ordered_json;

namespace {

constexpr char kParamsMagic[] = "drparams 1\n";
constexpr char kMemoryMagic[] = "drmemory 1\n";

void write_file(const std::string& path, const std::string& magic,
                const json& header, const std::vector<const Tensor<double>*>&
                                         payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Tensor<double>* t : payload)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path);
}

json read_header(std::ifstream& in, const std::string& path,
                 const std::string& magic) {
  std::string m(magic.size(), '\0');
  in.read(m.data(), static_cast<std::streamsize>(m.size()));
  if (!in || m != magic)
    throw FormatError(path + ": bad magic, expected " + magic.substr(0, magic.size() - 1));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 24)) throw FormatError(path + ": bad header length");
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated header");
  try {
    return json::parse(h);
  } catch (const json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
}

Tensor<double> read_tensor(std::ifstream& in, const std::string& path,
                           const Shape& shape) {
  Tensor<double> t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw IoError(path + ": truncated payload");
  return t;
}

}  // namespace

void save_params(const std::string& path, const ModelSpec& model,
                 const Params<double>& params) {
  const auto layout = param_layout(model);
  if (layout.size() != params.tensors.size())
    throw ContractError("save_params: layout/tensor count mismatch");
  json tensors = json::array();
  std::vector<const Tensor<double>*> payload;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    tensors.push_back({{"name", layout[i].name},
                       {"shape", params.tensors[i].shape()}});
    payload.push_back(&params.tensors[i]);
  }
  json header{{"format", "dr-params"},
              {"scalar", "f64"},
              {"model", model_kind_name(model.kind)},
              {"tensors", tensors}};
  write_file(path, kParamsMagic, header, payload);
}

Params<double> load_params(const std::string& path, const ModelSpec& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  const json header = read_header(in, path, kParamsMagic);
  const auto layout = param_layout(model);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != layout.size())
    throw FormatError(path + ": holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " +
                      std::to_string(layout.size()));
  Params<double> params;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Shape shape = tensors[i].at("shape").get<Shape>();
    if (shape != layout[i].shape)
      throw FormatError(path + ": tensor " + std::to_string(i) + " shape " +
                        shape_str(shape) + ", model expects " +
                        shape_str(layout[i].shape));
    params.tensors.push_back(read_tensor(in, path, shape));
  }
  return params;
}

void save_memory(const std::string& path, const DistilledMemory<double>& mem,
                 const DistillConfig& cfg,
                 const std::optional<Shape>& image_shape) {
  json header{{"format", "dr-memory"},
              {"scalar", "f64"},
              {"samples_shape", mem.samples.shape()},
              {"labels_shape", mem.labels.shape()},
              {"label_ids", mem.label_ids},
              {"source_experience", mem.source_experience},
              {"final_eta", mem.final_eta},
              {"meta_loss_history", mem.meta_loss_history},
              {"config",
               {{"S", cfg.inner_steps},
                {"R", cfg.outer_steps},
                {"eta", cfg.inner_lr},
                {"alpha", cfg.outer_lr},
                {"eta_alpha", cfg.eta_alpha},
                {"J", cfg.init_batch},
                {"n", cfg.real_batch},
                {"loss_mode", loss_mode_name(cfg.loss_mode)},
                {"lr_mode", lr_mode_name(cfg.lr_mode)},
                {"seed", cfg.seed}}}};
  if (image_shape) header["image_shape"] = *image_shape;
  write_file(path, kMemoryMagic, header, {&mem.samples, &mem.labels});
}

LoadedMemory load_memory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  const json header = read_header(in, path, kMemoryMagic);
  LoadedMemory out;
  DistilledMemory<double>& mem = out.memory;
  mem.samples = read_tensor(in, path, header.at("samples_shape").get<Shape>());
  mem.labels = read_tensor(in, path, header.at("labels_shape").get<Shape>());
  mem.label_ids = header.at("label_ids").get<std::vector<int>>();
  mem.source_experience = header.at("source_experience").get<int>();
  mem.final_eta = header.at("final_eta").get<double>();
  mem.meta_loss_history =
      header.at("meta_loss_history").get<std::vector<double>>();
  if (mem.label_ids.size() != mem.samples.dim(0) ||
      mem.label_ids.size() != mem.labels.dim(0))
    throw FormatError(path + ": label/sample count mismatch");
  const auto& c = header.at("config");
  out.config.inner_steps = c.at("S").get<std::size_t>();
  out.config.outer_steps = c.at("R").get<std::size_t>();
  out.config.inner_lr = c.at("eta").get<double>();
  out.config.outer_lr = c.at("alpha").get<double>();
  out.config.eta_alpha = c.at("eta_alpha").get<double>();
  out.config.init_batch = c.at("J").get<std::size_t>();
  out.config.real_batch = c.at("n").get<std::size_t>();
  out.config.loss_mode = c.at("loss_mode").get<std::string>() == "sum_all_steps"
                             ? LossMode::sum_all_steps
                             : LossMode::last_step_only;
  out.config.lr_mode = c.at("lr_mode").get<std::string>() == "fixed"
                           ? LrMode::fixed
                           : LrMode::learned;
  out.config.seed = c.at("seed").get<std::uint64_t>();
  if (header.contains("image_shape"))
    out.image_shape = header.at("image_shape").get<Shape>();
  return out;
}

void write_pgm(const std::string& path, const double* pixels, std::size_t h,
               std::size_t w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = pixels[y * w + x];
      const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      row[x] = static_cast<unsigned char>(std::floor(clamped * 255.0 + 0.5));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(w));
  }
  if (!out) throw IoError("short write to " + path);
}

}  // namespace dr
