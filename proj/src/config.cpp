#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "csdenoise/config.hpp"

namespace csd {

void TrainConfig::validate() const {
  if (!enable_image_loss && !enable_audio_loss)
    throw ValueError("config: at least one of image/audio loss must be enabled");
  if (batch_size < 1) throw ValueError("config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValueError("config: learning_rate must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("config: alpha outside [0,1]");
  if (epochs < 0 || max_steps < 0) throw ValueError("config: negative step counts");
  if (epochs == 0 && max_steps == 0)
    throw ValueError("config: one of epochs/max_steps must be positive");
  if (core != "swin" && core != "unet") throw ValueError("config: core must be swin or unet");
  if (unet_channels < 1) throw ValueError("config: unet_channels must be >= 1");
  if (clip_norm < 0.0) throw ValueError("config: clip_norm must be >= 0");
}

void RunConfig::validate() const {
  stft.validate();
  swin.validate();
  train.validate();
  if (stft.image_size != swin.image_size)
    throw ValueError("config: stft image_size " + std::to_string(stft.image_size) +
                     " != model image_size " + std::to_string(swin.image_size));
  if (swin.in_channels != 1)
    throw ValueError("config: the audio pipeline is mono, in_channels must be 1");
}

namespace {

std::string ints_csv(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValueError("config: field '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "image_size=" << stft.image_size << "\n";
  os << "n_fft=" << stft.n_fft << "\n";
  os << "win_length=" << stft.win_length << "\n";
  os << "window=" << stft.window << "\n";
  os << "center=" << (stft.center ? "true" : "false") << "\n";
  os << "in_channels=" << swin.in_channels << "\n";
  os << "embed_dim=" << swin.embed_dim << "\n";
  os << "window_size=" << swin.window_size << "\n";
  os << "depths=" << ints_csv(swin.depths) << "\n";
  os << "heads=" << ints_csv(swin.heads) << "\n";
  os << "mlp_ratio=" << fmt_double(swin.mlp_ratio) << "\n";
  os << "drop_rate=" << fmt_double(swin.drop_rate) << "\n";
  os << "dropout_shared_mask=" << (swin.dropout_shared_mask ? "true" : "false") << "\n";
  os << "core=" << train.core << "\n";
  os << "unet_channels=" << train.unet_channels << "\n";
  os << "batch_size=" << train.batch_size << "\n";
  os << "epochs=" << train.epochs << "\n";
  os << "max_steps=" << train.max_steps << "\n";
  os << "learning_rate=" << fmt_double(train.learning_rate) << "\n";
  os << "alpha=" << fmt_double(train.alpha) << "\n";
  os << "enable_image_loss=" << (train.enable_image_loss ? "true" : "false") << "\n";
  os << "enable_audio_loss=" << (train.enable_audio_loss ? "true" : "false") << "\n";
  os << "seed=" << train.seed << "\n";
  os << "checkpoint_every=" << train.checkpoint_every << "\n";
  os << "clip_norm=" << fmt_double(train.clip_norm) << "\n";
  os << "noisy_dir=" << noisy_dir << "\n";
  os << "clean_dir=" << clean_dir << "\n";
  os << "run_dir=" << run_dir << "\n";
  return os.str();
}

std::string RunConfig::arch_text() const {
  std::ostringstream os;
  os << "image_size=" << stft.image_size << "\n";
  os << "n_fft=" << stft.n_fft << "\n";
  os << "win_length=" << stft.win_length << "\n";
  os << "window=" << stft.window << "\n";
  os << "in_channels=" << swin.in_channels << "\n";
  os << "embed_dim=" << swin.embed_dim << "\n";
  os << "window_size=" << swin.window_size << "\n";
  os << "depths=" << ints_csv(swin.depths) << "\n";
  os << "heads=" << ints_csv(swin.heads) << "\n";
  os << "mlp_ratio=" << fmt_double(swin.mlp_ratio) << "\n";
  os << "core=" << train.core << "\n";
  os << "unet_channels=" << train.unet_channels << "\n";
  return os.str();
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (key == "image_size") {
    stft.image_size = std::stoi(v);
    swin.image_size = stft.image_size;
    stft.n_fft = 2 * stft.image_size - 1;
  } else if (key == "n_fft")
    stft.n_fft = std::stoi(v);
  else if (key == "win_length")
    stft.win_length = std::stoi(v);
  else if (key == "window")
    stft.window = v;
  else if (key == "center")
    stft.center = parse_bool(key, v);
  else if (key == "in_channels")
    swin.in_channels = std::stoi(v);
  else if (key == "embed_dim")
    swin.embed_dim = std::stoi(v);
  else if (key == "window_size")
    swin.window_size = std::stoi(v);
  else if (key == "depths")
    swin.depths = parse_ints(v);
  else if (key == "heads")
    swin.heads = parse_ints(v);
  else if (key == "mlp_ratio")
    swin.mlp_ratio = std::stod(v);
  else if (key == "drop_rate")
    swin.drop_rate = std::stod(v);
  else if (key == "dropout_shared_mask")
    swin.dropout_shared_mask = parse_bool(key, v);
  else if (key == "core")
    train.core = v;
  else if (key == "unet_channels")
    train.unet_channels = std::stoi(v);
  else if (key == "batch_size")
    train.batch_size = std::stoi(v);
  else if (key == "epochs")
    train.epochs = std::stoi(v);
  else if (key == "max_steps")
    train.max_steps = std::stoi(v);
  else if (key == "learning_rate")
    train.learning_rate = std::stod(v);
  else if (key == "alpha")
    train.alpha = std::stod(v);
  else if (key == "enable_image_loss")
    train.enable_image_loss = parse_bool(key, v);
  else if (key == "enable_audio_loss")
    train.enable_audio_loss = parse_bool(key, v);
  else if (key == "seed")
    train.seed = std::stoull(v);
  else if (key == "checkpoint_every")
    train.checkpoint_every = std::stoi(v);
  else if (key == "clip_norm")
    train.clip_norm = std::stod(v);
  else if (key == "noisy_dir")
    noisy_dir = v;
  else if (key == "clean_dir")
    clean_dir = v;
  else if (key == "run_dir")
    run_dir = v;
  else
    throw ValueError("config: unknown field '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: line " + std::to_string(lineno) + " is not key=value: '" + line +
                       "'");
    const std::string key = line.substr(first, eq - first);
    const std::string value = line.substr(eq + 1);
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw ValueError("config: line " + std::to_string(lineno) + ", field '" + key +
                       "': " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValueError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

uint64_t RunConfig::hash() const {
  const std::string text = to_text();
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::map<std::string, std::string> ka, kb;
  auto split = [](const std::string& text, std::map<std::string, std::string>& out) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const size_t eq = line.find('=');
      if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
  };
  split(a.arch_text(), ka);
  split(b.arch_text(), kb);
  std::vector<std::string> diff;
  for (const auto& [k, va] : ka) {
    const auto it = kb.find(k);
    const std::string vb = it == kb.end() ? "<missing>" : it->second;
    if (va != vb) diff.push_back(k + ": checkpoint=" + va + " requested=" + vb);
  }
  return diff;
}

}  // namespace csd
