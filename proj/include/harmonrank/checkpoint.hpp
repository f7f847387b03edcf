#pragma once

// Text checkpoint: model configuration followed by every tensor with its shape.
// Values are written in shortest round-trip form, so save -> load -> save is
// byte-identical.
//
//   harmonrank-checkpoint 1
//   objectives buy comment ...
//   buckets 300
//   ...
//   tensor <name> <rows> <cols>
//   <rows*cols space-separated values>
//   end

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "harmonrank/model.hpp"

namespace harmonrank {

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> objectives;
  ModelParams params;
};

inline constexpr const char* kCheckpointMagic = "harmonrank-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
  const ModelConfig& c = ck.config;
  auto check_token = [](const std::string& s) {
    if (s.empty() || s.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: names must be non-empty without whitespace: '" + s + "'");
    }
  };
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "objectives";
  for (const auto& o : ck.objectives) {
    check_token(o);
    out << ' ' << o;
  }
  out << '\n';
  out << "num_objectives " << c.num_objectives << '\n';
  out << "buckets " << c.buckets << '\n';
  out << "embed_dim " << c.embed_dim << '\n';
  out << "key_dim " << c.key_dim << '\n';
  out << "feature_dim " << c.feature_dim << '\n';
  if (c.embedding_init_sd) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, *c.embedding_init_sd);
    out << "embedding_init_sd " << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  }
  for (const auto& f : c.personalized_features) {
    check_token(f.name);
    out << "feature " << f.name << ' ' << f.cardinality << '\n';
  }
  const AblationSwitches& a = c.ablation;
  out << "ablation " << a.self_attention << ' ' << a.cross_attention << ' ' << a.personalized << ' ' << a.gate << ' '
      << a.linear_path << ' ' << a.relation_aware_path << ' ' << a.gated_path << '\n';
  out << "linear_path_input " << (c.linear_path_input == LinearPathInput::raw_scores ? "raw_scores" : "embeddings")
      << '\n';
  ck.params.for_each([&](const std::string& name, const Matrix& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    char buf[64];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof buf, m[i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  });
  out << "end\n";
}

inline Checkpoint load_checkpoint(std::istream& in) {
  auto fail = [](const std::string& what) -> void { throw std::invalid_argument("checkpoint: " + what); };
  std::string line;
  bool pending = false;
  auto next_line = [&]() -> std::istringstream {
    if (pending) {
      pending = false;
    } else if (!std::getline(in, line)) {
      fail("unexpected end of file");
    }
    return std::istringstream(line);
  };
  {
    auto ls = next_line();
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kCheckpointMagic) fail("not a checkpoint file");
    if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ModelConfig& c = ck.config;
  for (;;) {
    auto ls = next_line();
    std::string key;
    ls >> key;
    if (key == "objectives") {
      std::string o;
      while (ls >> o) ck.objectives.push_back(o);
      continue;
    } else if (key == "num_objectives") {
      ls >> c.num_objectives;
    } else if (key == "buckets") {
      ls >> c.buckets;
    } else if (key == "embed_dim") {
      ls >> c.embed_dim;
    } else if (key == "key_dim") {
      ls >> c.key_dim;
    } else if (key == "feature_dim") {
      ls >> c.feature_dim;
    } else if (key == "embedding_init_sd") {
      std::string v;
      ls >> v;
      double sd = 0.0;
      if (std::from_chars(v.data(), v.data() + v.size(), sd).ec != std::errc()) fail("bad embedding_init_sd '" + v + "'");
      c.embedding_init_sd = sd;
    } else if (key == "feature") {
      PersonalizedFeature f;
      ls >> f.name >> f.cardinality;
      c.personalized_features.push_back(f);
    } else if (key == "ablation") {
      AblationSwitches& a = c.ablation;
      ls >> a.self_attention >> a.cross_attention >> a.personalized >> a.gate >> a.linear_path >>
          a.relation_aware_path >> a.gated_path;
    } else if (key == "linear_path_input") {
      std::string v;
      ls >> v;
      if (v == "raw_scores") {
        c.linear_path_input = LinearPathInput::raw_scores;
      } else if (v == "embeddings") {
        c.linear_path_input = LinearPathInput::embeddings;
      } else {
        fail("bad linear_path_input '" + v + "'");
      }
    } else if (key == "tensor") {
      pending = true;
      break;
    } else {
      fail("unknown key '" + key + "'");
    }
    if (ls.fail()) fail("malformed line '" + line + "'");
  }
  c.validate();
  if (ck.objectives.size() != c.num_objectives) fail("objective names do not match num_objectives");

  ck.params = ModelParams::zeros(c);
  ck.params.for_each([&](const std::string& name, Matrix& m) {
    auto header = next_line();
    std::string tag, got;
    std::size_t rows = 0, cols = 0;
    header >> tag >> got >> rows >> cols;
    if (tag != "tensor" || got != name) fail("expected tensor " + name + ", found '" + line + "'");
    if (rows != m.rows() || cols != m.cols()) fail("shape mismatch for " + name);
    if (!std::getline(in, line)) fail("missing values for " + name);
    const char* p = line.data();
    const char* e = p + line.size();
    for (std::size_t i = 0; i < m.size(); ++i) {
      while (p < e && *p == ' ') ++p;
      const auto res = std::from_chars(p, e, m[i]);
      if (res.ec != std::errc()) fail("bad value in " + name);
      p = res.ptr;
    }
    while (p < e && *p == ' ') ++p;
    if (p != e) fail("trailing values in " + name);
  });
  if (!std::getline(in, line) || line != "end") fail("missing end marker");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(ck, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace harmonrank
