#include "vqab/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vqab {

void ExperimentSpec::finalize() {
  if (name.empty()) throw std::invalid_argument("config: experiment name is required");
  if (image_count < 1) throw std::invalid_argument("config: image_count must be positive");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
  if (split_fraction <= 0 || split_fraction > 1) throw std::invalid_argument("config: bad split_fraction");
  if (grid_every < 0) throw std::invalid_argument("config: grid_every must be non-negative");
  model.codebook_size = codebook_size;
  model.latent_dim = latent_dim;
  model.use_positional_encoding = use_positional_encoding;
  model.small_network = small_network;
  model.validate();
  weights.validate();
  if (optimizer.learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be positive");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: line " + std::to_string(line) + ": bad boolean '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

}  // namespace

std::vector<ExperimentSpec> parse_config(const std::string& text) {
  std::vector<ExperimentSpec> specs;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw std::invalid_argument("config: line " + std::to_string(line) + ": unterminated section");
      section = trim(s.substr(1, s.size() - 2));
      if (section == "experiment") {
        specs.emplace_back();
      } else if (section != "model" && section != "loss" && section != "optimizer") {
        throw std::invalid_argument("config: line " + std::to_string(line) + ": unknown section [" + section + "]");
      }
      if (specs.empty())
        throw std::invalid_argument("config: line " + std::to_string(line) + ": [" + section +
                                    "] before any [experiment]");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (specs.empty()) throw std::invalid_argument("config: line " + std::to_string(line) + ": key before [experiment]");
    ExperimentSpec& spec = specs.back();

    auto bad_key = [&]() {
      throw std::invalid_argument("config: line " + std::to_string(line) + ": unknown key '" + key + "' in [" +
                                  section + "]");
    };
    try {
      if (section == "experiment") {
        if (key == "name") spec.name = val;
        else if (key == "codebook_size") spec.codebook_size = std::stoi(val);
        else if (key == "latent_dim") spec.latent_dim = std::stoi(val);
        else if (key == "image_count") spec.image_count = std::stoi(val);
        else if (key == "epochs") spec.epochs = std::stoi(val);
        else if (key == "use_positional_encoding") spec.use_positional_encoding = parse_bool(val, line);
        else if (key == "small_network") spec.small_network = parse_bool(val, line);
        else if (key == "seed") spec.seed = std::stoi(val);
        else if (key == "data_dir") spec.data_dir = val;
        else if (key == "batch_size") spec.batch_size = std::stoi(val);
        else if (key == "split_fraction") spec.split_fraction = std::stod(val);
        else if (key == "grid_every") spec.grid_every = std::stoi(val);
        else bad_key();
      } else if (section == "model") {
        if (key == "image_size") spec.model.image_size = std::stoi(val);
        else if (key == "base_channels") spec.model.base_channels = std::stoi(val);
        else if (key == "channel_multipliers") spec.model.channel_multipliers = parse_int_list(val);
        else if (key == "num_downsamples") spec.model.num_downsamples = std::stoi(val);
        else if (key == "dropout_rate") spec.model.dropout_rate = std::stod(val);
        else if (key == "attn_resolutions") spec.model.attn_at_resolutions = parse_int_list(val);
        else bad_key();
      } else if (section == "loss") {
        if (key == "beta") spec.weights.beta = std::stod(val);
        else if (key == "perceptual_factor") spec.weights.perceptual_factor = std::stod(val);
        else if (key == "rec_factor") spec.weights.rec_factor = std::stod(val);
        else if (key == "disc_factor") spec.weights.disc_factor = std::stod(val);
        else if (key == "disc_start_step") spec.weights.disc_start_step = std::stoi(val);
        else if (key == "lambda_clamp_max") spec.weights.lambda_clamp_max = std::stod(val);
        else if (key == "lambda_scale") spec.weights.lambda_scale = std::stod(val);
        else if (key == "lambda_eps") spec.weights.lambda_eps = std::stod(val);
        else bad_key();
      } else if (section == "optimizer") {
        if (key == "learning_rate") spec.optimizer.learning_rate = std::stod(val);
        else if (key == "beta1") spec.optimizer.beta1 = std::stod(val);
        else if (key == "beta2") spec.optimizer.beta2 = std::stod(val);
        else bad_key();
      } else {
        throw std::invalid_argument("config: line " + std::to_string(line) + ": key outside any section");
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: line " + std::to_string(line) + ": bad value '" + val + "' for " + key);
    }
  }
  if (specs.empty()) throw std::invalid_argument("config: no [experiment] section found");
  std::set<std::string> names;
  for (ExperimentSpec& spec : specs) {
    spec.finalize();
    if (!names.insert(spec.name).second)
      throw std::invalid_argument("config: duplicate experiment name '" + spec.name + "'");
  }
  return specs;
}

std::vector<ExperimentSpec> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const ExperimentSpec& spec) {
  auto g = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  out += "[experiment]\n";
  out += "name = " + spec.name + "\n";
  out += "codebook_size = " + std::to_string(spec.codebook_size) + "\n";
  out += "latent_dim = " + std::to_string(spec.latent_dim) + "\n";
  out += "image_count = " + std::to_string(spec.image_count) + "\n";
  out += "epochs = " + std::to_string(spec.epochs) + "\n";
  out += "use_positional_encoding = " + std::string(spec.use_positional_encoding ? "true" : "false") + "\n";
  out += "small_network = " + std::string(spec.small_network ? "true" : "false") + "\n";
  out += "seed = " + std::to_string(spec.seed) + "\n";
  out += "data_dir = " + spec.data_dir + "\n";
  out += "batch_size = " + std::to_string(spec.batch_size) + "\n";
  out += "split_fraction = " + g(spec.split_fraction) + "\n";
  out += "grid_every = " + std::to_string(spec.grid_every) + "\n";
  out += "[model]\n";
  out += "image_size = " + std::to_string(spec.model.image_size) + "\n";
  out += "base_channels = " + std::to_string(spec.model.base_channels) + "\n";
  out += "channel_multipliers = ";
  for (size_t i = 0; i < spec.model.channel_multipliers.size(); ++i)
    out += (i ? "," : "") + std::to_string(spec.model.channel_multipliers[i]);
  out += "\n";
  out += "num_downsamples = " + std::to_string(spec.model.num_downsamples) + "\n";
  out += "dropout_rate = " + g(spec.model.dropout_rate) + "\n";
  if (!spec.model.attn_at_resolutions.empty()) {
    out += "attn_resolutions = ";
    for (size_t i = 0; i < spec.model.attn_at_resolutions.size(); ++i)
      out += (i ? "," : "") + std::to_string(spec.model.attn_at_resolutions[i]);
    out += "\n";
  }
  out += "[loss]\n";
  out += "beta = " + g(spec.weights.beta) + "\n";
  out += "perceptual_factor = " + g(spec.weights.perceptual_factor) + "\n";
  out += "rec_factor = " + g(spec.weights.rec_factor) + "\n";
  out += "disc_factor = " + g(spec.weights.disc_factor) + "\n";
  out += "disc_start_step = " + std::to_string(spec.weights.disc_start_step) + "\n";
  out += "lambda_clamp_max = " + g(spec.weights.lambda_clamp_max) + "\n";
  out += "lambda_scale = " + g(spec.weights.lambda_scale) + "\n";
  out += "lambda_eps = " + g(spec.weights.lambda_eps) + "\n";
  out += "[optimizer]\n";
  out += "learning_rate = " + g(spec.optimizer.learning_rate) + "\n";
  out += "beta1 = " + g(spec.optimizer.beta1) + "\n";
  out += "beta2 = " + g(spec.optimizer.beta2) + "\n";
  return out;
}

}  // namespace vqab
