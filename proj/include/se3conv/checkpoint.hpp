#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/model.hpp"

namespace se3conv {

// Checkpoint container: text manifest (config, base grid inline, tensor
// table) followed by raw little-endian f64 payloads in manifest order.
// Learnable tensors come first, then state buffers (batch-norm running
// statistics).

inline void save_checkpoint(Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("save_checkpoint: cannot open '" + path + "' for writing");
  const ModelConfig& cfg = model.config();
  out << "se3conv-checkpoint 1\n";
  out << "variant " << to_string(cfg.variant) << "\n";
  out << "grid_kind " << cfg.grid_kind << "\n";
  out << "resolution " << cfg.resolution << "\n";
  out << "channels " << cfg.channels[0] << " " << cfg.channels[1] << " "
      << cfg.channels[2] << "\n";
  out << "kernel_size " << cfg.kernel_size << "\n";
  out << "num_classes " << cfg.num_classes << "\n";
  out << "seed " << cfg.seed << "\n";
  out << "rbf_sigma " << format_g17(model.rbf_sigma()) << "\n";
  const RotationGrid& grid = model.base_grid();
  out << "grid " << grid.resolution() << " " << to_string(grid.kind) << " " << grid.seed
      << "\n";
  for (const auto& q : grid.elements)
    out << format_g17(q.w) << " " << format_g17(q.x) << " " << format_g17(q.y) << " "
        << format_g17(q.z) << "\n";
  auto tensors = model.tensors();
  auto buffers = model.buffers();
  auto emit_entry = [&out](const char* tag, const TensorRef& t) {
    out << tag << " " << t.name << " " << t.shape.size();
    for (int d : t.shape) out << " " << d;
    out << "\n";
  };
  for (const auto& t : tensors) emit_entry("tensor", t);
  for (const auto& t : buffers) emit_entry("buffer", t);
  out << "payload\n";
  auto emit_payload = [&out](const TensorRef& t) {
    out.write(reinterpret_cast<const char*>(t.value->data()),
              static_cast<std::streamsize>(t.value->size() * sizeof(double)));
  };
  for (const auto& t : tensors) emit_payload(t);
  for (const auto& t : buffers) emit_payload(t);
  if (!out) throw io_error("save_checkpoint: write to '" + path + "' failed");
}

namespace detail {

struct CheckpointHead {
  ModelConfig cfg;
  double rbf_sigma = 0;
  RotationGrid grid;
  std::vector<std::pair<std::string, std::vector<int>>> entries;  // tensors + buffers
  std::streampos payload_start;
};

inline CheckpointHead read_checkpoint_head(std::ifstream& in, const std::string& path) {
  CheckpointHead head;
  std::string line;
  if (!std::getline(in, line) || line != "se3conv-checkpoint 1")
    throw validation_error("load_checkpoint: missing or unsupported format-version in '" +
                           path + "'");
  bool have_grid = false;
  while (std::getline(in, line)) {
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "variant") {
      std::string v;
      ls >> v;
      head.cfg.variant = variant_from_string(v);
    } else if (key == "grid_kind") {
      ls >> head.cfg.grid_kind;
    } else if (key == "resolution") {
      ls >> head.cfg.resolution;
    } else if (key == "channels") {
      ls >> head.cfg.channels[0] >> head.cfg.channels[1] >> head.cfg.channels[2];
    } else if (key == "kernel_size") {
      ls >> head.cfg.kernel_size;
    } else if (key == "num_classes") {
      ls >> head.cfg.num_classes;
    } else if (key == "seed") {
      ls >> head.cfg.seed;
    } else if (key == "rbf_sigma") {
      ls >> head.rbf_sigma;
    } else if (key == "grid") {
      std::size_t n = 0;
      std::string kind;
      if (!(ls >> n >> kind >> head.grid.seed))
        throw validation_error("load_checkpoint: malformed grid line");
      head.grid.kind = grid_kind_from_string(kind);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line))
          throw validation_error("load_checkpoint: truncated grid block");
        std::istringstream qs(line);
        double w, x, y, z;
        if (!(qs >> w >> x >> y >> z))
          throw validation_error("load_checkpoint: malformed grid element " +
                                 std::to_string(i));
        head.grid.elements.push_back(UnitQuaternion::from_components(w, x, y, z));
      }
      record_stats(head.grid);
      have_grid = true;
    } else if (key == "tensor" || key == "buffer") {
      std::string name;
      std::size_t nd = 0;
      if (!(ls >> name >> nd))
        throw validation_error("load_checkpoint: malformed tensor line");
      std::vector<int> shape(nd);
      for (auto& d : shape)
        if (!(ls >> d)) throw validation_error("load_checkpoint: malformed tensor shape");
      head.entries.emplace_back(name, std::move(shape));
    } else {
      throw validation_error("load_checkpoint: unknown manifest key '" + key + "'");
    }
  }
  if (!have_grid) throw validation_error("load_checkpoint: missing field 'grid'");
  head.payload_start = in.tellg();
  return head;
}

}  // namespace detail

// Rebuild the model from the manifest (the inline grid is authoritative; the
// repulsion optimizer is not re-run) and restore every tensor bit-exactly.
// When `expected` is given, any config mismatch is a structured error, e.g.
// loading a cnn checkpoint into a gcnn run.
inline Model load_checkpoint(const std::string& path,
                             const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_checkpoint: cannot open '" + path + "'");
  const detail::CheckpointHead head = detail::read_checkpoint_head(in, path);
  if (expected) {
    auto mismatch = [&](const std::string& field, const std::string& a,
                        const std::string& b) {
      throw validation_error("load_checkpoint: config mismatch on " + field +
                             " (checkpoint " + a + ", expected " + b + ")");
    };
    if (expected->variant != head.cfg.variant)
      mismatch("variant", to_string(head.cfg.variant), to_string(expected->variant));
    if (expected->variant == Variant::Gcnn && expected->grid_kind != head.cfg.grid_kind)
      mismatch("grid_kind", head.cfg.grid_kind, expected->grid_kind);
    if (expected->channels != head.cfg.channels)
      mismatch("channels", "differ", "differ");
    if (expected->num_classes != head.cfg.num_classes)
      mismatch("num_classes", std::to_string(head.cfg.num_classes),
               std::to_string(expected->num_classes));
  }
  Model model(head.cfg, head.grid);
  model.set_rbf_sigma(head.rbf_sigma);

  auto tensors = model.tensors();
  auto buffers = model.buffers();
  std::vector<TensorRef> all;
  all.insert(all.end(), tensors.begin(), tensors.end());
  all.insert(all.end(), buffers.begin(), buffers.end());
  if (all.size() != head.entries.size())
    throw validation_error("load_checkpoint: tensor count mismatch (checkpoint has " +
                           std::to_string(head.entries.size()) + ", model needs " +
                           std::to_string(all.size()) + ")");
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& [name, shape] = head.entries[i];
    if (name != all[i].name)
      throw validation_error("load_checkpoint: tensor order mismatch at '" + name +
                             "' (model expects '" + all[i].name + "')");
    if (shape != all[i].shape) {
      std::ostringstream msg;
      msg << "load_checkpoint: shape mismatch for '" << name << "': checkpoint [";
      for (std::size_t d = 0; d < shape.size(); ++d)
        msg << (d ? "," : "") << shape[d];
      msg << "] vs model [";
      for (std::size_t d = 0; d < all[i].shape.size(); ++d)
        msg << (d ? "," : "") << all[i].shape[d];
      msg << "]";
      throw validation_error(msg.str());
    }
  }
  for (auto& t : all) {
    in.read(reinterpret_cast<char*>(t.value->data()),
            static_cast<std::streamsize>(t.value->size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != t.value->size() * sizeof(double))
      throw validation_error("load_checkpoint: truncated payload at tensor '" + t.name +
                             "'");
  }
  return model;
}

}  // namespace se3conv
