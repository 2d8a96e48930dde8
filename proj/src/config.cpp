#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "jetseg/encoder.hpp"
#include "jetseg/errors.hpp"

namespace jetseg {

std::string to_string(Profile p) {
  switch (p) {
    case Profile::workstation: return "workstation";
    case Profile::agx: return "agx";
    case Profile::nano: return "nano";
  }
  return "?";
}

Profile parse_profile(std::string_view text) {
  if (text == "workstation") return Profile::workstation;
  if (text == "agx") return Profile::agx;
  if (text == "nano") return Profile::nano;
  throw ConfigError("profile", "unknown profile '" + std::string(text) + "'");
}

ModelConfig ModelConfig::for_profile(Profile p) {
  ModelConfig c;
  c.profile = p;
  switch (p) {
    case Profile::workstation:
      break;
    case Profile::agx:
      c.stem_channels = 12;
      c.stage_channels = {16, 24, 32};
      break;
    case Profile::nano:
      c.stem_channels = 8;
      c.stage_channels = {12, 16, 24};
      c.group_max = 4;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  if (input_h < 1 || input_w < 1 || input_h % 16 != 0 || input_w % 16 != 0) {
    throw ConfigError("input_size", "height and width must be positive multiples of 16");
  }
  if (stem_channels < 1) throw ConfigError("stem_channels", "must be positive");
  if (stem_levels < 1 || stem_levels > 3) throw ConfigError("stem_levels", "must be 1, 2 or 3");
  for (int s = 0; s < 3; ++s) {
    if (stage_channels[s] < 1) throw ConfigError("stage_channels", "widths must be positive");
    if (blocks_per_stage[s] < 1) throw ConfigError("blocks_per_stage", "counts must be >= 1");
    if (jetconv_levels[s] < 1 || jetconv_levels[s] > 3) {
      throw ConfigError("jetconv_levels", "levels must be 1, 2 or 3");
    }
  }
  if (!(expansion_ratio > 0.0)) throw ConfigError("expansion_ratio", "must be positive");
  for (int s = 0; s < 3; ++s) {
    for (std::int64_t b = 0; b < std::min<std::int64_t>(blocks_per_stage[s], 2); ++b) {
      try {
        (void)block_spec(s, b).expanded_channels();
      } catch (const InvalidSpec& e) {
        throw ConfigError("expansion_ratio", e.what());
      }
    }
  }
  if (group_max < 1) throw ConfigError("group_max", "must be positive");
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (decoder_mid < 1) throw ConfigError("decoder_mid", "must be positive");
  if (decoder_head < 1) throw ConfigError("decoder_head", "must be positive");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T, std::size_t N, class F>
std::string join(const std::array<T, N>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ' ';
    out += fmt(values[i]);
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
  return v;
}

std::vector<std::string> expect_words(const std::string& key, const std::string& value,
                                      std::size_t count) {
  auto w = words(value);
  if (w.size() != count) {
    throw ConfigError(key, "expected " + std::to_string(count) + " values, got " +
                               std::to_string(w.size()));
  }
  return w;
}

template <class T, class F>
std::array<T, 3> parse_triple(const std::string& key, const std::string& value, F&& conv) {
  auto w = expect_words(key, value, 3);
  return {conv(w[0]), conv(w[1]), conv(w[2])};
}

}  // namespace

std::string ModelConfig::to_text() const {
  auto i64 = [](std::int64_t v) { return std::to_string(v); };
  auto att = [](AttentionKind k) { return to_string(k); };
  auto act = [](Activation a) { return to_string(a); };
  std::ostringstream os;
  os << "profile = " << to_string(profile) << "\n"
     << "input_size = " << input_h << " " << input_w << "\n"
     << "stem_channels = " << stem_channels << "\n"
     << "stem_levels = " << stem_levels << "\n"
     << "stem_activation = " << to_string(stem_activation) << "\n"
     << "stage_channels = " << join(stage_channels, i64) << "\n"
     << "blocks_per_stage = " << join(blocks_per_stage, i64) << "\n"
     << "jetconv_levels = " << join(jetconv_levels, [](int v) { return std::to_string(v); })
     << "\n"
     << "attention = " << join(attention, att) << "\n"
     << "activation = " << join(activation, act) << "\n"
     << "expansion_ratio = " << format_double(expansion_ratio) << "\n"
     << "group_max = " << group_max << "\n"
     << "num_classes = " << num_classes << "\n"
     << "decoder_mid = " << decoder_mid << "\n"
     << "decoder_head = " << decoder_head << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  std::map<std::string, std::string> entries;
  std::istringstream is{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (!entries.emplace(key, value).second) throw ConfigError(key, "duplicate key");
  }

  ModelConfig c;
  if (auto it = entries.find("profile"); it != entries.end()) {
    c = for_profile(parse_profile(it->second));
    entries.erase(it);
  }
  auto wrap = [](const std::string& key, auto&& fn) {
    try {
      return fn();
    } catch (const InvalidSpec& e) {
      throw ConfigError(key, e.what());
    }
  };
  for (const auto& [key, value] : entries) {
    auto as_int = [&key](const std::string& t) { return parse_int(key, t); };
    if (key == "input_size") {
      auto w = expect_words(key, value, 2);
      c.input_h = parse_int(key, w[0]);
      c.input_w = parse_int(key, w[1]);
    } else if (key == "stem_channels") {
      c.stem_channels = parse_int(key, value);
    } else if (key == "stem_levels") {
      c.stem_levels = static_cast<int>(parse_int(key, value));
    } else if (key == "stem_activation") {
      c.stem_activation = wrap(key, [&] { return parse_activation(value); });
    } else if (key == "stage_channels") {
      c.stage_channels = parse_triple<std::int64_t>(key, value, as_int);
    } else if (key == "blocks_per_stage") {
      c.blocks_per_stage = parse_triple<std::int64_t>(key, value, as_int);
    } else if (key == "jetconv_levels") {
      c.jetconv_levels = parse_triple<int>(
          key, value, [&](const std::string& t) { return static_cast<int>(as_int(t)); });
    } else if (key == "attention") {
      c.attention = parse_triple<AttentionKind>(key, value, [&](const std::string& t) {
        return wrap(key, [&] { return parse_attention(t); });
      });
    } else if (key == "activation") {
      c.activation = parse_triple<Activation>(key, value, [&](const std::string& t) {
        return wrap(key, [&] { return parse_activation(t); });
      });
    } else if (key == "expansion_ratio") {
      c.expansion_ratio = parse_real(key, value);
    } else if (key == "group_max") {
      c.group_max = parse_int(key, value);
    } else if (key == "num_classes") {
      c.num_classes = parse_int(key, value);
    } else if (key == "decoder_mid") {
      c.decoder_mid = parse_int(key, value);
    } else if (key == "decoder_head") {
      c.decoder_head = parse_int(key, value);
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ModelConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write config file " + path.string());
  out << to_text();
}

std::vector<std::string> ModelConfig::diff(const ModelConfig& other) const {
  std::vector<std::string> fields;
  auto check = [&fields](bool same, const char* name) {
    if (!same) fields.emplace_back(name);
  };
  check(profile == other.profile, "profile");
  check(input_h == other.input_h && input_w == other.input_w, "input_size");
  check(stem_channels == other.stem_channels, "stem_channels");
  check(stem_levels == other.stem_levels, "stem_levels");
  check(stem_activation == other.stem_activation, "stem_activation");
  check(stage_channels == other.stage_channels, "stage_channels");
  check(blocks_per_stage == other.blocks_per_stage, "blocks_per_stage");
  check(jetconv_levels == other.jetconv_levels, "jetconv_levels");
  check(attention == other.attention, "attention");
  check(activation == other.activation, "activation");
  check(expansion_ratio == other.expansion_ratio, "expansion_ratio");
  check(group_max == other.group_max, "group_max");
  check(num_classes == other.num_classes, "num_classes");
  check(decoder_mid == other.decoder_mid, "decoder_mid");
  check(decoder_head == other.decoder_head, "decoder_head");
  return fields;
}

}  // namespace jetseg
