#include "unfmri/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace unfmri {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

std::string show(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <class F>
Setter wrap(F f) {
  return [f](RunConfig& c, const std::string& key, const std::string& value) {
    try {
      f(c, key, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.variant", wrap([](RunConfig& c, auto&, auto& v) { c.model.variant = parse_variant(v); })},
      {"model.k", wrap([](RunConfig& c, auto& k, auto& v) { c.model.num_stages = parse_number<int>(k, v); })},
      {"model.S", wrap([](RunConfig& c, auto& k, auto& v) { c.model.num_splits = parse_number<int>(k, v); })},
      {"model.C", wrap([](RunConfig& c, auto& k, auto& v) { c.model.channels = parse_number<int>(k, v); })},
      {"model.window", wrap([](RunConfig& c, auto& k, auto& v) { c.model.window = parse_number<int>(k, v); })},
      {"model.heads", wrap([](RunConfig& c, auto& k, auto& v) { c.model.heads = parse_number<int>(k, v); })},
      {"model.pgsa_groups", wrap([](RunConfig& c, auto& k, auto& v) { c.model.pgsa_groups = parse_number<int>(k, v); })},
      {"model.reduction", wrap([](RunConfig& c, auto& k, auto& v) { c.model.reduction = parse_number<int>(k, v); })},
      {"model.denoiser", wrap([](RunConfig& c, auto&, auto& v) {
         if (v == "auto") {
           c.model.denoiser.reset();
         } else {
           c.model.denoiser = parse_denoiser(v);
         }
       })},
      {"mask.kind", wrap([](RunConfig& c, auto&, auto& v) { c.mask.kind = parse_mask_kind(v); })},
      {"mask.R", wrap([](RunConfig& c, auto& k, auto& v) { c.mask.acceleration = parse_number<int>(k, v); })},
      {"mask.seed", wrap([](RunConfig& c, auto& k, auto& v) { c.mask.seed = parse_number<std::uint64_t>(k, v); })},
      {"mask.acs", wrap([](RunConfig& c, auto& k, auto& v) { c.mask.acs_lines = parse_number<int>(k, v); })},
      {"train.epochs", wrap([](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_number<int>(k, v); })},
      {"train.batch_size", wrap([](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<int>(k, v); })},
      {"train.learning_rate",
       wrap([](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = parse_number<double>(k, v); })},
      {"train.beta1", wrap([](RunConfig& c, auto& k, auto& v) { c.train.beta1 = parse_number<double>(k, v); })},
      {"train.beta2", wrap([](RunConfig& c, auto& k, auto& v) { c.train.beta2 = parse_number<double>(k, v); })},
      {"train.adam_epsilon",
       wrap([](RunConfig& c, auto& k, auto& v) { c.train.adam_epsilon = parse_number<double>(k, v); })},
      {"train.loss", wrap([](RunConfig& c, auto&, auto& v) { c.train.loss = parse_loss(v); })},
      {"train.seed", wrap([](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); })},
      {"train.checkpoint_every",
       wrap([](RunConfig& c, auto& k, auto& v) { c.train.checkpoint_every = parse_number<int>(k, v); })},
      {"train.max_steps", wrap([](RunConfig& c, auto& k, auto& v) { c.train.max_steps = parse_number<int>(k, v); })},
      {"data.source", wrap([](RunConfig& c, auto& k, auto& v) {
         if (v != "phantom" && v != "manifest") throw ConfigError(k, "source must be phantom or manifest");
         c.data.source = v;
       })},
      {"data.phantom", wrap([](RunConfig& c, auto&, auto& v) { c.data.phantom = parse_phantom_kind(v); })},
      {"data.size", wrap([](RunConfig& c, auto& k, auto& v) { c.data.size = parse_number<int>(k, v); })},
      {"data.train_count", wrap([](RunConfig& c, auto& k, auto& v) { c.data.train_count = parse_number<int>(k, v); })},
      {"data.val_count", wrap([](RunConfig& c, auto& k, auto& v) { c.data.val_count = parse_number<int>(k, v); })},
      {"data.test_count", wrap([](RunConfig& c, auto& k, auto& v) { c.data.test_count = parse_number<int>(k, v); })},
      {"data.phantom_seed",
       wrap([](RunConfig& c, auto& k, auto& v) { c.data.phantom_seed = parse_number<std::uint64_t>(k, v); })},
      {"data.manifest", wrap([](RunConfig& c, auto&, auto& v) { c.data.manifest = v; })},
      {"data.split", wrap([](RunConfig& c, auto& k, auto& v) {
         const std::vector<std::string> parts = split_list(v);
         if (parts.size() != 3) throw ConfigError(k, "split needs three ratios");
         for (int i = 0; i < 3; ++i) c.data.split[i] = parse_number<double>(k, parts[i]);
       })},
      {"data.split_seed",
       wrap([](RunConfig& c, auto& k, auto& v) { c.data.split_seed = parse_number<std::uint64_t>(k, v); })},
      {"out.dir", wrap([](RunConfig& c, auto&, auto& v) { c.out_dir = v; })},
      {"ablate.variants", wrap([](RunConfig& c, auto& k, auto& v) {
         c.ablate_variants.clear();
         for (const std::string& name : split_list(v)) c.ablate_variants.push_back(parse_variant(name));
         if (c.ablate_variants.empty()) throw ConfigError(k, "variant list is empty");
       })},
  };
  return table;
}

void check_semantics(const RunConfig& c) {
  auto guard = [](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
  guard("model", [&] { c.model.validate(); });
  guard("train", [&] { c.train.validate(); });
  if (c.data.size < 16) throw ConfigError("data.size", "images must be at least 16 pixels on a side");
  if (c.data.source == "phantom" && c.data.train_count < 1) {
    throw ConfigError("data.train_count", "at least one training phantom is required");
  }
  if (c.data.val_count < 0 || c.data.test_count < 0) throw ConfigError("data", "split counts must be non-negative");
  if (c.data.source == "manifest" && c.data.manifest.empty()) throw ConfigError("data.manifest", "manifest path missing");
}

}  // namespace

RunConfig::RunConfig() {
  model.num_stages = 2;
  model.channels = 16;
  model.height = data.size;
  model.width = data.size;
}

ConfigError::ConfigError(const std::string& key, const std::string& message)
    : std::invalid_argument("config key '" + key + "': " + message), key_(key) {}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header on line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      static const char* known[] = {"model", "mask", "train", "data", "out", "ablate"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigError(section, "unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value on line " + std::to_string(lineno));
    const std::string key = section + "." + trim(line.substr(0, eq));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key, "unknown key");
    it->second(c, key, trim(line.substr(eq + 1)));
  }
  c.model.height = c.data.size;
  c.model.width = c.data.size;
  check_semantics(c);
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  os << "[model]\n"
     << "variant = " << to_string(c.model.variant) << '\n'
     << "k = " << c.model.num_stages << '\n'
     << "S = " << c.model.num_splits << '\n'
     << "C = " << c.model.channels << '\n'
     << "window = " << c.model.window << '\n'
     << "heads = " << c.model.heads << '\n'
     << "pgsa_groups = " << c.model.pgsa_groups << '\n'
     << "reduction = " << c.model.reduction << '\n'
     << "denoiser = " << (c.model.denoiser ? to_string(*c.model.denoiser) : std::string("auto")) << "\n\n";
  os << "[mask]\n"
     << "kind = " << to_string(c.mask.kind) << '\n'
     << "R = " << c.mask.acceleration << '\n'
     << "seed = " << c.mask.seed << '\n'
     << "acs = " << c.mask.acs_lines << "\n\n";
  os << "[train]\n"
     << "epochs = " << c.train.epochs << '\n'
     << "batch_size = " << c.train.batch_size << '\n'
     << "learning_rate = " << show(c.train.learning_rate) << '\n'
     << "beta1 = " << show(c.train.beta1) << '\n'
     << "beta2 = " << show(c.train.beta2) << '\n'
     << "adam_epsilon = " << show(c.train.adam_epsilon) << '\n'
     << "loss = " << to_string(c.train.loss) << '\n'
     << "seed = " << c.train.seed << '\n'
     << "checkpoint_every = " << c.train.checkpoint_every << '\n'
     << "max_steps = " << c.train.max_steps << "\n\n";
  os << "[data]\n"
     << "source = " << c.data.source << '\n'
     << "phantom = " << to_string(c.data.phantom) << '\n'
     << "size = " << c.data.size << '\n'
     << "train_count = " << c.data.train_count << '\n'
     << "val_count = " << c.data.val_count << '\n'
     << "test_count = " << c.data.test_count << '\n'
     << "phantom_seed = " << c.data.phantom_seed << '\n';
  if (!c.data.manifest.empty()) os << "manifest = " << c.data.manifest << '\n';
  os << "split = " << show(c.data.split[0]) << ' ' << show(c.data.split[1]) << ' ' << show(c.data.split[2]) << '\n'
     << "split_seed = " << c.data.split_seed << "\n\n";
  os << "[out]\n"
     << "dir = " << c.out_dir << "\n\n";
  os << "[ablate]\nvariants = ";
  for (std::size_t i = 0; i < c.ablate_variants.size(); ++i) os << (i ? "," : "") << to_string(c.ablate_variants[i]);
  os << '\n';
  return os.str();
}

RunData load_run_data(const DataSpec& spec, const std::filesystem::path& base_dir) {
  RunData d;
  if (spec.source == "phantom") {
    const int n = spec.size;
    std::uint64_t seed = spec.phantom_seed;
    d.train = make_phantom_set(spec.phantom, spec.train_count, n, n, seed);
    seed += static_cast<std::uint64_t>(spec.train_count);
    d.val = make_phantom_set(spec.phantom, spec.val_count, n, n, seed);
    seed += static_cast<std::uint64_t>(spec.val_count);
    d.test = make_phantom_set(spec.phantom, spec.test_count, n, n, seed);
    return d;
  }
  const std::filesystem::path manifest_path =
      std::filesystem::path(spec.manifest).is_absolute() ? std::filesystem::path(spec.manifest)
                                                         : base_dir / spec.manifest;
  const DatasetManifest manifest = read_manifest(manifest_path);
  const DatasetSplit split = split_dataset(manifest, spec.split, spec.split_seed);
  const std::filesystem::path root = manifest_path.parent_path();
  d.train = load_samples(split.train, root);
  d.val = load_samples(split.val, root);
  d.test = load_samples(split.test, root);
  for (const auto* set : {&d.train, &d.val, &d.test}) {
    for (const Sample& s : *set) {
      if (s.image.height() != spec.size || s.image.width() != spec.size) {
        throw ConfigError("data.size", "sample " + s.id + " is not " + std::to_string(spec.size) + "x" +
                                           std::to_string(spec.size));
      }
    }
  }
  return d;
}

}  // namespace unfmri
