#include "ssc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ssc/errors.hpp"
#include "ssc/labels.hpp"

namespace ssc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

double to_real(const std::string& tok, const std::string& key) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "': not a number: " + tok);
  return v;
}

std::uint64_t to_uint(const std::string& tok, const std::string& key) {
  std::uint64_t v = 0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("'" + key + "': not a non-negative integer: " + tok);
  }
  return v;
}

bool to_bool(const std::string& tok, const std::string& key) {
  if (tok == "true" || tok == "1" || tok == "on" || tok == "yes") return true;
  if (tok == "false" || tok == "0" || tok == "off" || tok == "no") return false;
  throw ConfigError("'" + key + "': not a boolean: " + tok);
}

std::vector<double> reals(const std::vector<std::string>& toks, std::size_t n,
                          const std::string& key) {
  if (toks.size() != n) {
    throw ConfigError("'" + key + "': expected " + std::to_string(n) + " values, got " +
                      std::to_string(toks.size()));
  }
  std::vector<double> out;
  for (const auto& t : toks) out.push_back(to_real(t, key));
  return out;
}

const std::string& single(const std::vector<std::string>& toks, const std::string& key) {
  if (toks.size() != 1) throw ConfigError("'" + key + "': expected exactly one value");
  return toks.front();
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (scene.image.width < 2 || scene.image.height < 2) {
    throw ConfigError("camera image must be at least 2x2 pixels");
  }
  if (!scene.calibration && !(scene.focal > 0.0)) {
    throw ConfigError("camera focal length must be positive");
  }
  for (auto c : scene.palette) {
    if (c == kEmptyClass || c >= model.num_classes) {
      throw ConfigError("palette class " + std::to_string(c) + " is not a semantic class");
    }
  }
  if (scene.num_boxes > 0 && scene.palette.empty()) {
    throw ConfigError("palette must be non-empty when boxes are requested");
  }
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig rc;

  using Setter = void (*)(RunConfig&, const std::vector<std::string>&, const std::string&,
                          const std::filesystem::path&);
  static const std::map<std::string, Setter> kSetters = {
      {"model.num_queries", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.num_queries = to_uint(single(v, k), k);
       }},
      {"model.embed_dim", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.embed_dim = to_uint(single(v, k), k);
       }},
      {"model.decoder_layers", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.decoder_layers = to_uint(single(v, k), k);
       }},
      {"model.encoder_layers", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.encoder_layers = to_uint(single(v, k), k);
       }},
      {"model.heads", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.heads = to_uint(single(v, k), k);
       }},
      {"model.sampling_points", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.sampling_points = to_uint(single(v, k), k);
       }},
      {"model.feature_levels", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.feature_levels = to_uint(single(v, k), k);
       }},
      {"model.ffn_hidden", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.ffn_hidden = to_uint(single(v, k), k);
       }},
      {"model.num_classes", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.num_classes = to_uint(single(v, k), k);
       }},
      {"model.upsample_factor", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.upsample_factor = to_uint(single(v, k), k);
       }},
      {"model.query_mode", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.query_mode = parse_query_mode(single(v, k));
       }},
      {"stages.instance_from_image", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.stages.instance_from_image = to_bool(single(v, k), k);
       }},
      {"stages.scene_from_instance", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.stages.scene_from_instance = to_bool(single(v, k), k);
       }},
      {"stages.scene_self_attn", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.stages.scene_self_attn = to_bool(single(v, k), k);
       }},
      {"stages.instance_from_scene", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.stages.instance_from_scene = to_bool(single(v, k), k);
       }},
      {"stages.instance_self_attn", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.model.stages.instance_self_attn = to_bool(single(v, k), k);
       }},
      {"grid.origin", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         const auto r = reals(v, 3, k);
         c.model.grid.origin = Vec3(r[0], r[1], r[2]);
       }},
      {"grid.voxel_size", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         const auto r = reals(v, 3, k);
         c.model.grid.voxel_size = Vec3(r[0], r[1], r[2]);
       }},
      {"grid.dims", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         if (v.size() != 3) throw ConfigError("'" + k + "': expected 3 values");
         for (std::size_t a = 0; a < 3; ++a) c.model.grid.dims[a] = to_uint(v[a], k);
       }},
      {"camera.width", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.image.width = to_uint(single(v, k), k);
       }},
      {"camera.height", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.image.height = to_uint(single(v, k), k);
       }},
      {"camera.focal", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.focal = to_real(single(v, k), k);
       }},
      {"camera.position", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         const auto r = reals(v, 3, k);
         c.scene.camera_position = Vec3(r[0], r[1], r[2]);
       }},
      {"camera.calibration", [](RunConfig& c, const auto& v, const auto& k, const auto& base) {
         std::filesystem::path p = single(v, k);
         c.scene.calibration = p.is_relative() && !base.empty() ? base / p : p;
       }},
      {"scene.num_boxes", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.num_boxes = to_uint(single(v, k), k);
       }},
      {"scene.ground_plane", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.ground_plane = to_bool(single(v, k), k);
       }},
      {"scene.palette", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.scene.palette.clear();
         for (const auto& t : v) {
           const auto id = to_uint(t, k);
           if (id > 254) throw ConfigError("'" + k + "': class id out of range");
           c.scene.palette.push_back(static_cast<std::uint8_t>(id));
         }
       }},
      {"run.seed", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.seed = to_uint(single(v, k), k);
       }},
      {"run.out", [](RunConfig& c, const auto& v, const auto& k, const auto&) {
         c.out_dir = single(v, k);
       }},
  };
  static const std::set<std::string> kSections = {"model", "stages", "grid",
                                                  "camera", "scene", "run"};

  std::istringstream is(text);
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (std::string raw; std::getline(is, raw);) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!kSections.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const auto it = kSetters.find(key);
    if (it == kSetters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second(rc, split_ws(line.substr(eq + 1)), key, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.parent_path());
}

std::string format_run_config(const RunConfig& c) {
  const auto& m = c.model;
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto v3 = [](const Vec3& v) {
    return fmt_real(v.x()) + " " + fmt_real(v.y()) + " " + fmt_real(v.z());
  };
  std::ostringstream os;
  os << "[model]\n"
     << "num_queries = " << m.num_queries << "\n"
     << "embed_dim = " << m.embed_dim << "\n"
     << "decoder_layers = " << m.decoder_layers << "\n"
     << "encoder_layers = " << m.encoder_layers << "\n"
     << "heads = " << m.heads << "\n"
     << "sampling_points = " << m.sampling_points << "\n"
     << "feature_levels = " << m.feature_levels << "\n"
     << "ffn_hidden = " << m.ffn_hidden << "\n"
     << "num_classes = " << m.num_classes << "\n"
     << "upsample_factor = " << m.upsample_factor << "\n"
     << "query_mode = " << to_string(m.query_mode) << "\n\n"
     << "[stages]\n"
     << "instance_from_image = " << b(m.stages.instance_from_image) << "\n"
     << "scene_from_instance = " << b(m.stages.scene_from_instance) << "\n"
     << "scene_self_attn = " << b(m.stages.scene_self_attn) << "\n"
     << "instance_from_scene = " << b(m.stages.instance_from_scene) << "\n"
     << "instance_self_attn = " << b(m.stages.instance_self_attn) << "\n\n"
     << "[grid]\n"
     << "origin = " << v3(m.grid.origin) << "\n"
     << "voxel_size = " << v3(m.grid.voxel_size) << "\n"
     << "dims = " << m.grid.dims[0] << " " << m.grid.dims[1] << " " << m.grid.dims[2] << "\n\n"
     << "[camera]\n"
     << "width = " << c.scene.image.width << "\n"
     << "height = " << c.scene.image.height << "\n"
     << "focal = " << fmt_real(c.scene.focal) << "\n"
     << "position = " << v3(c.scene.camera_position) << "\n";
  if (c.scene.calibration) os << "calibration = " << c.scene.calibration->string() << "\n";
  os << "\n[scene]\n"
     << "num_boxes = " << c.scene.num_boxes << "\n"
     << "ground_plane = " << b(c.scene.ground_plane) << "\n"
     << "palette =";
  for (auto id : c.scene.palette) os << " " << static_cast<int>(id);
  os << "\n\n[run]\n"
     << "seed = " << c.seed << "\n"
     << "out = " << c.out_dir.string() << "\n";
  return os.str();
}

CameraModel parse_calibration(const std::string& text) {
  std::map<std::string, std::vector<std::string>> entries;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(is, raw);) {
    ++line_no;
    auto toks = split_ws(strip_comment(raw));
    if (toks.empty()) continue;
    std::string key = toks.front();
    if (!key.empty() && key.back() == ':') key.pop_back();
    toks.erase(toks.begin());
    if (key != "K" && key != "R" && key != "T" && key != "image_size") {
      throw ConfigError("calibration line " + std::to_string(line_no) + ": unknown key '" + key +
                        "'");
    }
    if (entries.count(key)) throw ConfigError("calibration: duplicate key '" + key + "'");
    entries[key] = std::move(toks);
  }
  for (const char* key : {"K", "R", "T", "image_size"}) {
    if (!entries.count(key)) throw ConfigError(std::string("calibration: missing key '") + key + "'");
  }
  CameraModel cam;
  const auto k = reals(entries["K"], 9, "K");
  const auto r = reals(entries["R"], 9, "R");
  const auto t = reals(entries["T"], 3, "T");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      cam.intrinsics(i, j) = k[static_cast<std::size_t>(i * 3 + j)];
      cam.rotation(i, j) = r[static_cast<std::size_t>(i * 3 + j)];
    }
  }
  cam.translation = Vec3(t[0], t[1], t[2]);
  const auto& size = entries["image_size"];
  if (size.size() != 2) throw ConfigError("calibration: image_size needs 2 integers");
  cam.image_size = ImageSize{to_uint(size[0], "image_size"), to_uint(size[1], "image_size")};
  cam.validate();
  return cam;
}

CameraModel load_calibration(const std::filesystem::path& path) {
  return parse_calibration(read_text_file(path));
}

std::string format_calibration(const CameraModel& cam) {
  std::ostringstream os;
  os << "# pinhole calibration: x_cam = R x_world + T\nK";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) os << ' ' << fmt_real(cam.intrinsics(i, j));
  os << "\nR";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) os << ' ' << fmt_real(cam.rotation(i, j));
  os << "\nT";
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_real(cam.translation[i]);
  os << "\nimage_size " << cam.image_size.width << ' ' << cam.image_size.height << "\n";
  return os.str();
}

CameraModel scene_camera(const RunConfig& config) {
  if (config.scene.calibration) return load_calibration(*config.scene.calibration);
  CameraModel cam =
      make_forward_camera(config.scene.image, config.scene.focal, config.scene.camera_position);
  cam.validate();
  return cam;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace ssc
