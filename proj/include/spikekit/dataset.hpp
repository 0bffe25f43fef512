#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "spikekit/checkpoint.hpp"
#include "spikekit/errors.hpp"
#include "spikekit/features.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

// Fixed 12-class order for Speech Commands v1.
inline const std::array<std::string, 12>& class_names() {
  static const std::array<std::string, 12> names = {"silence", "unknown", "yes", "no",
                                                    "up",      "down",    "left", "right",
                                                    "on",      "off",     "stop", "go"};
  return names;
}

inline int class_index(const std::string& name) {
  const auto& names = class_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

enum class Split { Train, Valid, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "'");
}

/// One dataset item: a corpus utterance, or a synthesized 1-second silence
/// crop out of a background-noise file (crop_offset < 0 means all zeros).
struct ManifestEntry {
  std::string path;  // relative to the corpus root
  bool is_crop = false;
  int64_t crop_offset = 0;
  int label = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::string root;
  std::vector<ManifestEntry> entries;

  std::vector<size_t> split_indices(Split s) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].split == s) out.push_back(i);
    }
    return out;
  }

  std::array<int64_t, 12> class_counts(Split s) const {
    std::array<int64_t, 12> counts{};
    for (const auto& e : entries) {
      if (e.split == s) counts[static_cast<size_t>(e.label)]++;
    }
    return counts;
  }

  // Keeps only the first n train entries (evaluation splits untouched).
  void limit_train(size_t n) {
    std::vector<ManifestEntry> kept;
    size_t taken = 0;
    for (const auto& e : entries) {
      if (e.split == Split::Train) {
        if (taken >= n) continue;
        ++taken;
      }
      kept.push_back(e);
    }
    entries = std::move(kept);
  }
};

struct NoiseFile {
  std::string path;  // relative
  int64_t n_samples;
};

/// Seeded 1-second crop descriptors over the noise files; every tenth entry
/// is an all-zero crop. Files shorter than one second are skipped with a
/// warning.
inline std::vector<ManifestEntry> generate_silence(const std::vector<NoiseFile>& noise_files,
                                                   int count, uint32_t seed) {
  if (count <= 0) throw DataError("generate_silence: count must be positive");
  std::vector<NoiseFile> usable;
  for (const auto& nf : noise_files) {
    if (nf.n_samples < 16000) {
      std::cerr << "warning: noise file '" << nf.path << "' shorter than 1 s, skipping\n";
      continue;
    }
    usable.push_back(nf);
  }
  if (usable.empty()) throw CorpusError("no usable background noise files");
  std::mt19937 rng(seed);
  std::vector<ManifestEntry> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<size_t> pick(0, usable.size() - 1);
    const NoiseFile& nf = usable[pick(rng)];
    ManifestEntry e;
    e.path = nf.path;
    e.is_crop = true;
    e.label = class_index("silence");
    if (i % 10 == 0) {
      e.crop_offset = -1;  // all-zero silence
    } else {
      std::uniform_int_distribution<int64_t> off(0, nf.n_samples - 16000);
      e.crop_offset = off(rng);
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {

inline std::set<std::string> read_list_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw CorpusError("missing split list file '" + p.string() + "'");
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' ')) {
      line.pop_back();
    }
    if (!line.empty()) out.insert(line);
  }
  return out;
}

inline int64_t wav_sample_count(const std::string& path) {
  return static_cast<int64_t>(load_wav(path).size());
}

}  // namespace detail

/// Scans a Speech Commands v1 directory tree: word directories plus
/// `_background_noise_` and the two split list files. Words outside the ten
/// targets map to `unknown`; silence entries are synthesized per split with
/// counts matching an average target class.
inline Manifest build_manifest(const std::string& root, uint32_t seed = 1234) {
  namespace fs = std::filesystem;
  const fs::path rootp(root);
  if (!fs::is_directory(rootp)) throw CorpusError("corpus root '" + root + "' is not a directory");

  const std::set<std::string> valid_list = detail::read_list_file(rootp / "validation_list.txt");
  const std::set<std::string> test_list = detail::read_list_file(rootp / "testing_list.txt");

  Manifest m;
  m.root = root;
  std::vector<NoiseFile> noise;
  size_t word_dirs = 0;
  std::vector<std::string> dirs;
  for (const auto& de : fs::directory_iterator(rootp)) {
    if (de.is_directory()) dirs.push_back(de.path().filename().string());
  }
  std::sort(dirs.begin(), dirs.end());

  for (const std::string& word : dirs) {
    if (word == "_background_noise_") {
      std::vector<std::string> files;
      for (const auto& f : fs::directory_iterator(rootp / word)) {
        if (f.path().extension() == ".wav") files.push_back(word + "/" + f.path().filename().string());
      }
      std::sort(files.begin(), files.end());
      for (const std::string& rel : files) {
        noise.push_back(NoiseFile{rel, detail::wav_sample_count((rootp / rel).string())});
      }
      continue;
    }
    ++word_dirs;
    const int label = class_index(word) >= 2 ? class_index(word) : class_index("unknown");
    std::vector<std::string> files;
    for (const auto& f : fs::directory_iterator(rootp / word)) {
      if (f.path().extension() == ".wav") files.push_back(word + "/" + f.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    for (const std::string& rel : files) {
      ManifestEntry e;
      e.path = rel;
      e.label = label;
      if (test_list.count(rel)) {
        e.split = Split::Test;
      } else if (valid_list.count(rel)) {
        e.split = Split::Valid;
      } else {
        e.split = Split::Train;
      }
      m.entries.push_back(std::move(e));
    }
  }
  if (word_dirs == 0) throw CorpusError("corpus root '" + root + "' contains no word directories");
  if (noise.empty()) throw CorpusError("corpus root '" + root + "' has no _background_noise_ files");

  // Silence per split, sized like an average target class in that split.
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    const auto counts = m.class_counts(s);
    int64_t total = 0;
    for (int c = 2; c < 12; ++c) total += counts[static_cast<size_t>(c)];
    const int want = static_cast<int>(std::max<int64_t>(1, total / 10));
    const uint32_t split_seed = seed + 7919u * static_cast<uint32_t>(s);
    auto crops = generate_silence(noise, want, split_seed);
    for (auto& e : crops) {
      e.split = s;
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Manifest text round-trip: `path<TAB>label<TAB>split`, crops as `file:offset`
// (offset -1 for all-zero crops).
// ---------------------------------------------------------------------------

inline void export_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  for (const auto& e : m.entries) {
    if (e.is_crop) {
      out << e.path << ':' << e.crop_offset;
    } else {
      out << e.path;
    }
    out << '\t' << class_names()[static_cast<size_t>(e.label)] << '\t' << split_name(e.split)
        << '\n';
  }
}

inline Manifest import_manifest(const std::string& path, const std::string& root) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  Manifest m;
  m.root = root;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                        ": expected path<TAB>label<TAB>split");
    }
    ManifestEntry e;
    std::string p = line.substr(0, t1);
    const std::string label = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string split = line.substr(t2 + 1);
    const int idx = class_index(label);
    if (idx < 0) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                        ": unknown label '" + label + "'");
    }
    e.label = idx;
    e.split = split_from_string(split);
    const size_t colon = p.rfind(':');
    if (idx == class_index("silence") && colon != std::string::npos) {
      e.is_crop = true;
      try {
        e.crop_offset = std::stoll(p.substr(colon + 1));
      } catch (const std::exception&) {
        throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                          ": bad crop offset in '" + p + "'");
      }
      e.path = p.substr(0, colon);
    } else {
      e.path = p;
    }
    if (!std::filesystem::exists(std::filesystem::path(root) / e.path)) {
      throw DataError("manifest entry '" + e.path + "' does not exist under '" + root + "'");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sampling and batching
// ---------------------------------------------------------------------------

/// Class-balancing sampler over the train split: entry weight proportional to
/// 1 / (train count of its class). Inverse-CDF sampling for reproducibility.
struct WeightedSampler {
  std::vector<size_t> indices;  // manifest indices of train entries
  std::vector<double> cumulative;

  WeightedSampler() = default;

  explicit WeightedSampler(const Manifest& m) {
    const auto counts = m.class_counts(Split::Train);
    double acc = 0.0;
    for (size_t i = 0; i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      if (e.split != Split::Train) continue;
      indices.push_back(i);
      acc += 1.0 / static_cast<double>(counts[static_cast<size_t>(e.label)]);
      cumulative.push_back(acc);
    }
  }

  size_t draw(std::mt19937& rng) const {
    std::uniform_real_distribution<double> u(0.0, cumulative.back());
    const double x = u(rng);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    const size_t k = static_cast<size_t>(it - cumulative.begin());
    return indices[std::min(k, indices.size() - 1)];
  }
};

struct Batch {
  Tensor features;  // [B, 1, n_frames, n_mels]
  std::vector<int> labels;
  std::vector<size_t> entry_indices;
};

/// Deterministic feature batch stream. Train epochs sample with replacement
/// under the class-balancing weights; valid/test iterate every entry once in
/// manifest order. Batch order is a pure function of (seed, epoch).
class BatchStream {
 public:
  BatchStream(const Manifest& manifest, Split split, int batch_size, uint32_t seed,
              FeatureConfig fcfg = {}, std::string cache_dir = "")
      : manifest_(&manifest),
        split_(split),
        batch_size_(batch_size),
        seed_(seed),
        fcfg_(fcfg),
        cache_dir_(std::move(cache_dir)) {
    if (batch_size < 1) throw DataError("batch size must be >= 1");
    eval_indices_ = manifest.split_indices(split);
    if (eval_indices_.empty()) {
      throw DataError(std::string("split '") + split_name(split) + "' is empty");
    }
    if (split == Split::Train) sampler_ = WeightedSampler(manifest);
    reset(0);
  }

  int64_t steps_per_epoch() const {
    const size_t n = eval_indices_.size();
    return static_cast<int64_t>((n + static_cast<size_t>(batch_size_) - 1) /
                                static_cast<size_t>(batch_size_));
  }

  void reset(int64_t epoch) {
    cursor_ = 0;
    order_.clear();
    if (split_ == Split::Train) {
      std::mt19937 rng(seed_ ^ (0x9e3779b9u * static_cast<uint32_t>(epoch + 1)));
      const int64_t steps = steps_per_epoch();
      order_.reserve(static_cast<size_t>(steps * batch_size_));
      for (int64_t i = 0; i < steps * batch_size_; ++i) order_.push_back(sampler_.draw(rng));
    } else {
      order_ = eval_indices_;
    }
  }

  bool next(Batch* batch) {
    if (cursor_ >= order_.size()) return false;
    const size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
    std::vector<float> data(take * static_cast<size_t>(fcfg_.n_frames) * fcfg_.n_mels);
    batch->labels.clear();
    batch->entry_indices.clear();
    for (size_t i = 0; i < take; ++i) {
      const size_t idx = order_[cursor_ + i];
      const auto& e = manifest_->entries[idx];
      Tensor f = load_features(e);
      std::copy(f.values().begin(), f.values().end(),
                data.begin() + static_cast<std::ptrdiff_t>(i * f.values().size()));
      batch->labels.push_back(e.label);
      batch->entry_indices.push_back(idx);
    }
    cursor_ += take;
    batch->features = Tensor::from_data(
        {static_cast<int64_t>(take), 1, fcfg_.n_frames, fcfg_.n_mels}, std::move(data));
    return true;
  }

  Tensor load_features(const ManifestEntry& e) {
    if (!cache_dir_.empty()) {
      const std::string key = cache_key(e);
      if (std::filesystem::exists(key)) {
        TensorContainer c = load_container(key);
        if (const Tensor* t = c.find("features")) return *t;
        throw CheckpointError("feature cache '" + key + "' has no 'features' tensor");
      }
      Tensor t = compute_features(e);
      TensorContainer c;
      c.tensors.emplace_back("features", t);
      c.meta["source"] = e.path;
      save_container(key, c);
      return t;
    }
    return compute_features(e);
  }

 private:
  Tensor compute_features(const ManifestEntry& e) {
    std::vector<float> samples;
    if (e.is_crop) {
      if (e.crop_offset < 0) {
        samples.assign(16000, 0.0f);
      } else {
        const std::vector<float>& noise = noise_buffer(e.path);
        samples.assign(noise.begin() + e.crop_offset, noise.begin() + e.crop_offset + 16000);
      }
    } else {
      samples = load_wav((std::filesystem::path(manifest_->root) / e.path).string());
    }
    return log_mel(samples, fcfg_);
  }

  const std::vector<float>& noise_buffer(const std::string& rel) {
    auto it = noise_cache_.find(rel);
    if (it != noise_cache_.end()) return it->second;
    auto [pos, _] = noise_cache_.emplace(
        rel, load_wav((std::filesystem::path(manifest_->root) / rel).string()));
    return pos->second;
  }

  std::string cache_key(const ManifestEntry& e) const {
    std::string name = e.path;
    for (char& c : name) {
      if (c == '/' || c == '\\' || c == ':') c = '_';
    }
    if (e.is_crop) name += "_" + std::to_string(e.crop_offset);
    return (std::filesystem::path(cache_dir_) / (name + ".feat")).string();
  }

  const Manifest* manifest_;
  Split split_;
  int batch_size_;
  uint32_t seed_;
  FeatureConfig fcfg_;
  std::string cache_dir_;
  WeightedSampler sampler_;
  std::vector<size_t> eval_indices_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  std::map<std::string, std::vector<float>> noise_cache_;
};

}  // namespace spikekit
