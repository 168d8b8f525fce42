#include "svi/io.hpp"

#include "svi/errors.hpp"
#include "svi/text_io.hpp"

namespace svi::io {

namespace {

void append_values(std::string& out, std::span<const double> v) {
  for (double x : v) {
    out += ' ';
    text::append_double(out, x);
  }
}

void append_vec(std::string& out, const Eigen::Vector3d& v) { append_values(out, {v.data(), 3}); }
void append_vec(std::string& out, const Eigen::Vector2d& v) { append_values(out, {v.data(), 2}); }

class Cursor {
 public:
  Cursor(std::vector<std::string_view> tokens, std::size_t line) : tokens_(std::move(tokens)), line_(line) {}
  double next() {
    if (pos_ >= tokens_.size()) fail("too few values");
    return text::parse_double(tokens_[pos_++]);
  }
  template <int N>
  Eigen::Matrix<double, N, 1> vec() {
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v[i] = next();
    return v;
  }
  std::size_t remaining() const { return tokens_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("sequence line " + std::to_string(line_) + ": " + what);
  }

 private:
  std::vector<std::string_view> tokens_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

std::string rest_after(std::string_view line, std::size_t n_tokens) {
  // Everything after the first n whitespace-separated tokens, one space dropped.
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n_tokens; ++k) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    while (pos < line.size() && line[pos] != ' ') ++pos;
  }
  if (pos < line.size()) ++pos;
  return std::string(line.substr(pos));
}

}  // namespace

SequenceFile SequenceFile::from_motion(const synth::MotionSequence& m) {
  SequenceFile f;
  f.fps = m.fps;
  f.phi = m.phi;
  f.T = m.T;
  f.beta = m.beta;
  for (const auto& c : m.contacts) f.q.push_back({static_cast<double>(c[0]), static_cast<double>(c[1])});
  if (f.q.size() != f.phi.size()) f.q.assign(f.phi.size(), {0.0, 0.0});
  return f;
}

synth::MotionSequence SequenceFile::to_motion() const {
  synth::MotionSequence m;
  m.fps = fps;
  m.phi = phi;
  m.T = T;
  m.beta = beta;
  for (const auto& q2 : q) m.contacts.push_back({q2[0] >= 0.5 ? 1 : 0, q2[1] >= 0.5 ? 1 : 0});
  return m;
}

std::string SequenceFile::serialize(const body::BodyTemplate& tpl) const {
  const std::size_t n = size();
  if (T.size() != n || q.size() != n) throw ShapeError("SequenceFile: per-frame arrays differ in length");
  const bool obs = has_observations();
  if (obs && (stereo.size() != n || imu.size() != n)) throw ShapeError("SequenceFile: observation count mismatch");
  std::string out = "SVISEQ " + std::to_string(kSequenceVersion) + " ";
  text::append_double(out, fps);
  out += " " + std::to_string(n);
  append_values(out, {beta.data(), body::kShapeDim});
  out += " " + text::hex64(tpl.checksum()) + " " + (obs ? "1" : "0") + "\n";
  std::string line;
  for (std::size_t t = 0; t < n; ++t) {
    line.clear();
    std::array<double, 72> p{};
    body::pose_to_span(phi[t], p);
    append_values(line, p);
    append_vec(line, T[t]);
    append_values(line, q[t]);
    if (obs) {
      const auto& s = stereo[t];
      for (int k = 0; k < body::kNumCoco; ++k) {
        append_vec(line, s.p2d_l[k]);
        append_vec(line, s.p2d_r[k]);
        append_vec(line, s.p3d_l[k]);
        append_vec(line, s.p3d_r[k]);
        append_values(line, {&s.conf_l[k], 1});
        append_values(line, {&s.conf_r[k], 1});
      }
      for (int i = 0; i < body::kNumImus; ++i) {
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) append_values(line, {&imu[t].R[i](r, c), 1});
        }
        append_vec(line, imu[t].acc[i]);
      }
    }
    out.append(line, 1, std::string::npos);  // drop the leading space
    out += '\n';
  }
  return out;
}

SequenceFile SequenceFile::parse(std::string_view text, const body::BodyTemplate& tpl) {
  const auto lines = text::split_lines(text);
  std::size_t li = 0;
  while (li < lines.size() && text::trim(lines[li]).empty()) ++li;
  if (li == lines.size()) throw FormatError("empty sequence file");
  const auto head = text::split_ws(lines[li]);
  if (head.size() != 16 || head[0] != "SVISEQ") throw FormatError("not a sequence file (bad header)");
  if (text::parse_int(head[1]) != kSequenceVersion) throw FormatError("unsupported sequence version");
  SequenceFile f;
  f.fps = text::parse_double(head[2]);
  if (!(f.fps > 0)) throw FormatError("fps must be positive");
  const long long frames = text::parse_int(head[3]);
  if (frames < 0) throw FormatError("negative frame count");
  for (int i = 0; i < body::kShapeDim; ++i) f.beta[i] = text::parse_double(head[4 + static_cast<std::size_t>(i)]);
  if (head[14] != text::hex64(tpl.checksum())) {
    throw FormatError("sequence was written for a different body template (checksum " + std::string(head[14]) +
                      ", loaded " + text::hex64(tpl.checksum()) + ")");
  }
  const bool obs = head[15] == "1";
  if (!obs && head[15] != "0") throw FormatError("has_obs flag must be 0 or 1");

  const std::size_t expect = 72 + 3 + 2 + (obs ? kStereoValues + kImuValues : 0);
  std::size_t count = 0;
  for (++li; li < lines.size(); ++li) {
    if (text::trim(lines[li]).empty()) continue;
    Cursor c(text::split_ws(lines[li]), li + 1);
    if (c.remaining() != expect) {
      c.fail("expected " + std::to_string(expect) + " values, found " + std::to_string(c.remaining()));
    }
    body::Pose p{};
    for (auto& v : p) v = c.vec<3>();
    f.phi.push_back(p);
    f.T.push_back(c.vec<3>());
    f.q.push_back({c.next(), c.next()});
    if (obs) {
      stereo::StereoObservation s;
      for (int k = 0; k < body::kNumCoco; ++k) {
        s.p2d_l[k] = c.vec<2>();
        s.p2d_r[k] = c.vec<2>();
        s.p3d_l[k] = c.vec<3>();
        s.p3d_r[k] = c.vec<3>();
        s.conf_l[k] = c.next();
        s.conf_r[k] = c.next();
      }
      synth::ImuFrame m;
      for (int i = 0; i < body::kNumImus; ++i) {
        for (int r = 0; r < 3; ++r) {
          for (int cc = 0; cc < 3; ++cc) m.R[i](r, cc) = c.next();
        }
        m.acc[i] = c.vec<3>();
      }
      f.stereo.push_back(s);
      f.imu.push_back(m);
    }
    ++count;
  }
  if (count != static_cast<std::size_t>(frames)) {
    throw FormatError("header says " + std::to_string(frames) + " frames, file has " + std::to_string(count));
  }
  return f;
}

void SequenceFile::save(const std::string& path, const body::BodyTemplate& tpl) const {
  text::write_file(path, serialize(tpl));
}

SequenceFile SequenceFile::load(const std::string& path, const body::BodyTemplate& tpl) {
  return parse(text::read_file(path), tpl);
}

// ---------------------------------------------------------------------------

ShapeRecord ShapeRecord::make(const body::BodyShape& beta, const body::BodyTemplate& tpl) {
  ShapeRecord r;
  r.beta = beta;
  for (int j = 1; j < body::kNumJoints; ++j) r.bone_lengths[j - 1] = body::bone_offset(tpl, j, beta).norm();
  return r;
}

std::string ShapeRecord::serialize() const {
  std::string out = "SVISHAPE 1\nbeta";
  append_values(out, {beta.data(), body::kShapeDim});
  out += "\nfinal_energy ";
  text::append_double(out, final_energy);
  out += "\niterations " + std::to_string(iterations);
  out += std::string("\nused_cloud ") + (used_cloud ? "1" : "0");
  out += "\nbone_lengths";
  append_values(out, bone_lengths);
  out += '\n';
  return out;
}

ShapeRecord ShapeRecord::parse(std::string_view text) {
  ShapeRecord r;
  bool have_beta = false;
  for (const auto line : text::split_lines(text)) {
    const auto tok = text::split_ws(line);
    if (tok.empty() || tok[0] == "SVISHAPE") continue;
    if (tok[0] == "beta") {
      if (tok.size() != 1 + body::kShapeDim) throw FormatError("shape record: beta needs 10 values");
      for (int i = 0; i < body::kShapeDim; ++i) r.beta[i] = text::parse_double(tok[1 + static_cast<std::size_t>(i)]);
      have_beta = true;
    } else if (tok[0] == "final_energy" && tok.size() == 2) {
      r.final_energy = text::parse_double(tok[1]);
    } else if (tok[0] == "iterations" && tok.size() == 2) {
      r.iterations = static_cast<int>(text::parse_int(tok[1]));
    } else if (tok[0] == "used_cloud" && tok.size() == 2) {
      r.used_cloud = tok[1] == "1";
    } else if (tok[0] == "bone_lengths" && tok.size() == 1 + r.bone_lengths.size()) {
      for (std::size_t i = 0; i < r.bone_lengths.size(); ++i) r.bone_lengths[i] = text::parse_double(tok[1 + i]);
    } else {
      throw FormatError("shape record: unexpected line '" + std::string(line) + "'");
    }
  }
  if (!have_beta) throw FormatError("shape record has no beta line");
  return r;
}

// ---------------------------------------------------------------------------

std::string RunManifest::serialize() const {
  std::string out = "SVIRUN 1\n";
  for (const auto& a : args) {
    if (a.find('\n') != std::string::npos) throw FormatError("manifest arguments cannot contain newlines");
    out += "arg " + a + "\n";
  }
  out += "config_hash " + config_hash + "\n";
  for (const auto& [name, seed] : seeds) out += "seed " + name + " " + std::to_string(seed) + "\n";
  for (const auto& [name, hash] : checkpoints) out += "checkpoint " + name + " " + hash + "\n";
  for (const auto& [key, value] : outputs) out += "output " + key + " " + value + "\n";
  return out;
}

RunManifest RunManifest::parse(std::string_view text) {
  const auto lines = text::split_lines(text);
  if (lines.empty() || text::trim(lines[0]) != "SVIRUN 1") throw FormatError("not a run manifest");
  RunManifest m;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    if (text::trim(line).empty()) continue;
    const auto tok = text::split_ws(line);
    if (tok[0] == "arg") {
      m.args.push_back(rest_after(line, 1));
    } else if (tok[0] == "config_hash") {
      m.config_hash = tok.size() > 1 ? std::string(tok[1]) : "";
    } else if (tok[0] == "seed" && tok.size() == 3) {
      m.seeds.emplace_back(std::string(tok[1]), text::parse_u64(tok[2]));
    } else if (tok[0] == "checkpoint" && tok.size() == 3) {
      m.checkpoints.emplace_back(std::string(tok[1]), std::string(tok[2]));
    } else if (tok[0] == "output" && tok.size() >= 2) {
      m.outputs.emplace_back(std::string(tok[1]), rest_after(line, 2));
    } else {
      throw FormatError("manifest line " + std::to_string(i + 1) + " not understood");
    }
  }
  return m;
}

}  // namespace svi::io
