#pragma once
// Multi-head network: a stack of dense (optionally residual) blocks with one
// linear head per hierarchy level. A head reads the representation after the
// block named in the attachment map, so every head shares the backbone below it.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "hiershift/error.hpp"
#include "hiershift/rng.hpp"
#include "hiershift/tape.hpp"
#include "hiershift/tensor.hpp"

namespace hiershift {

enum class Activation { kRelu, kIdentity };

struct Block {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
  Activation activation = Activation::kRelu;
  bool residual = false;

  std::size_t fan_in() const { return weight.rows(); }
  std::size_t fan_out() const { return weight.cols(); }
};

struct Head {
  Tensor weight;  // fan_in x classes at `level`
  Tensor bias;
  int level = 1;
};

struct NetConfig {
  std::size_t input_dim = 32;
  std::size_t width = 64;
  std::size_t blocks = 4;
  /// level -> number of blocks the head sits after (1-based). Empty selects
  /// default_attachment().
  std::map<int, std::size_t> attachment;
};

/// First head after the second-to-last block, all deeper heads after the last
/// block. A single head always reads the last block.
inline std::map<int, std::size_t> default_attachment(const std::vector<int>& levels, std::size_t blocks) {
  std::map<int, std::size_t> a;
  if (levels.empty()) return a;
  const int first = *std::min_element(levels.begin(), levels.end());
  for (int l : levels) a[l] = (levels.size() > 1 && l == first && blocks > 1) ? blocks - 1 : blocks;
  return a;
}

class MultiHeadNet {
 public:
  /// `head_classes` lists (level, number of classes at that level) in level order.
  static MultiHeadNet build(const NetConfig& cfg, const std::vector<std::pair<int, std::size_t>>& head_classes,
                            std::uint64_t seed) {
    if (cfg.blocks == 0) throw ConfigError("network needs at least one block");
    if (head_classes.empty()) throw ConfigError("network needs at least one head");
    MultiHeadNet net;
    std::vector<int> levels;
    for (auto [level, classes] : head_classes) levels.push_back(level);
    net.attachment_ = cfg.attachment.empty() ? default_attachment(levels, cfg.blocks) : cfg.attachment;

    std::size_t fan_in = cfg.input_dim;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      Block blk;
      blk.weight = init_weight(fan_in, cfg.width, stream_key(seed, "init", "block." + std::to_string(b)));
      blk.bias = Tensor({cfg.width});
      blk.residual = fan_in == cfg.width;
      net.blocks_.push_back(std::move(blk));
      fan_in = cfg.width;
    }
    for (auto [level, classes] : head_classes) {
      Head h;
      h.level = level;
      h.weight = init_weight(cfg.width, classes, stream_key(seed, "init", "head." + std::to_string(level)));
      h.bias = Tensor({classes});
      net.heads_.push_back(std::move(h));
    }
    net.validate();
    return net;
  }

  /// Assembles a network from explicit parts.
  MultiHeadNet(std::vector<Block> blocks, std::vector<Head> heads, std::map<int, std::size_t> attachment)
      : blocks_(std::move(blocks)), heads_(std::move(heads)), attachment_(std::move(attachment)) {
    validate();
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Head>& heads() const { return heads_; }
  std::vector<Head>& heads() { return heads_; }
  const std::map<int, std::size_t>& attachment() const { return attachment_; }
  std::size_t input_dim() const { return blocks_.front().fan_in(); }

  std::vector<int> head_levels() const {
    std::vector<int> out;
    for (const auto& h : heads_) out.push_back(h.level);
    return out;
  }

  /// Head predicting the deepest level (the class level).
  const Head& final_head() const { return heads_.back(); }

  /// (name, tensor) pairs in a fixed order: blocks then heads, weight before bias.
  std::vector<std::pair<std::string, Tensor*>> named_parameters() { return collect(*this); }
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const { return collect(*this); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }

  bool same_parameters(const MultiHeadNet& other) const {
    auto a = named_parameters();
    auto b = other.named_parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].first != b[i].first || !(*a[i].second == *b[i].second)) return false;
    return true;
  }

 private:
  MultiHeadNet() = default;

  template <typename Self, typename Ptr = std::conditional_t<std::is_const_v<Self>, const Tensor*, Tensor*>>
  static std::vector<std::pair<std::string, Ptr>> collect(Self& self) {
    std::vector<std::pair<std::string, Ptr>> out;
    for (std::size_t b = 0; b < self.blocks_.size(); ++b) {
      out.emplace_back("block." + std::to_string(b) + ".weight", &self.blocks_[b].weight);
      out.emplace_back("block." + std::to_string(b) + ".bias", &self.blocks_[b].bias);
    }
    for (auto& h : self.heads_) {
      out.emplace_back("head." + std::to_string(h.level) + ".weight", &h.weight);
      out.emplace_back("head." + std::to_string(h.level) + ".bias", &h.bias);
    }
    return out;
  }

  static Tensor init_weight(std::size_t fan_in, std::size_t fan_out, std::uint64_t key) {
    // Uniform in +-1/sqrt(fan_in).
    Tensor w = Tensor::matrix(fan_in, fan_out);
    RandomStream rng(key);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
    return w;
  }

  void validate() const {
    if (blocks_.empty() || heads_.empty()) throw ConfigError("network needs at least one block and one head");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      if (blk.bias.size() != blk.fan_out()) throw ConfigError("block " + std::to_string(b) + ": bias length mismatch");
      if (blk.residual && blk.fan_in() != blk.fan_out())
        throw ConfigError("block " + std::to_string(b) + ": residual requires fan_in == fan_out");
      if (b > 0 && blk.fan_in() != blocks_[b - 1].fan_out())
        throw ConfigError("block " + std::to_string(b) + ": fan_in does not match previous block");
    }
    std::size_t last_attach = 0;
    int last_level = 0;
    for (const Head& h : heads_) {
      if (h.level <= last_level) throw ConfigError("heads must be listed in strictly increasing level order");
      auto it = attachment_.find(h.level);
      if (it == attachment_.end()) throw ConfigError("no attachment for head at level " + std::to_string(h.level));
      if (it->second < 1 || it->second > blocks_.size())
        throw ConfigError("head at level " + std::to_string(h.level) + " attaches after nonexistent block " +
                          std::to_string(it->second));
      if (it->second < last_attach) throw ConfigError("attachment must be non-decreasing in level");
      if (h.weight.rows() != blocks_[it->second - 1].fan_out())
        throw ConfigError("head at level " + std::to_string(h.level) + ": fan_in mismatch");
      if (h.bias.size() != h.weight.cols()) throw ConfigError("head bias length mismatch");
      last_attach = it->second;
      last_level = h.level;
    }
  }

  std::vector<Block> blocks_;
  std::vector<Head> heads_;
  std::map<int, std::size_t> attachment_;
};

/// Logits per head level, as tape variables.
struct Recorded {
  std::map<int, Var> logits;
};

namespace detail {

template <typename Net, typename Bind>
Recorded forward_impl(Tape& tape, Net& net, Var x, Bind bind) {
  if (tape.value(x).cols() != net.input_dim())
    throw NumericError("input has " + std::to_string(tape.value(x).cols()) + " columns, network expects " +
                       std::to_string(net.input_dim()));
  Recorded out;
  Var h = x;
  std::size_t done = 0;
  auto emit_heads = [&](std::size_t after) {
    for (auto& head : net.heads())
      if (net.attachment().at(head.level) == after)
        out.logits[head.level] = tape.add_bias(tape.matmul(h, bind(head.weight)), bind(head.bias));
  };
  std::size_t last_needed = 0;
  for (const auto& [level, after] : net.attachment()) last_needed = std::max(last_needed, after);
  for (auto& blk : net.blocks()) {
    if (done == last_needed) break;
    Var z = tape.add_bias(tape.matmul(h, bind(blk.weight)), bind(blk.bias));
    if (blk.activation == Activation::kRelu) z = tape.relu(z);
    h = blk.residual ? tape.add(z, h) : z;
    emit_heads(++done);
  }
  return out;
}

}  // namespace detail

/// Records a training forward pass; parameters are bound for backward().
inline Recorded forward(Tape& tape, MultiHeadNet& net, const Tensor& x) {
  return detail::forward_impl(tape, net, tape.view(x), [&](Tensor& p) { return tape.parameter(p); });
}

/// Pure evaluation: logits per head level.
inline std::map<int, Tensor> forward(const MultiHeadNet& net, const Tensor& x) {
  Tape tape;
  auto rec = detail::forward_impl(tape, net, tape.view(x), [&](const Tensor& p) { return tape.view(p); });
  std::map<int, Tensor> out;
  for (auto& [level, v] : rec.logits) out.emplace(level, tape.value(v));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "HSH1", then per tensor: u32 name length, name bytes, u32 rank,
// u64 dims, f64 values. All little-endian.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  bool at_end() const { return pos_ == data_.size(); }
  std::uint64_t get(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > data_.size()) throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError("checkpoint truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string checkpoint_bytes(const MultiHeadNet& net) {
  std::string out = "HSH1";
  for (auto& [name, t] : net.named_parameters()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const auto& shape = t->shape();
    detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) detail::put_u64(out, d);
    for (double v : t->values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

/// Overwrites the parameters of `net`; names and shapes must match exactly.
inline void restore_checkpoint(MultiHeadNet& net, std::string_view bytes) {
  if (bytes.substr(0, 4) != "HSH1") throw DataError("checkpoint: bad magic (expected HSH1)");
  detail::ByteReader r(bytes.substr(4));
  auto params = net.named_parameters();
  std::size_t i = 0;
  while (!r.at_end()) {
    std::string name(r.take(r.get(4)));
    if (i >= params.size()) throw DataError("checkpoint has extra tensor '" + name + "'");
    auto& [expected, t] = params[i++];
    if (name != expected) throw DataError("checkpoint tensor '" + name + "' where '" + expected + "' was expected");
    std::vector<std::size_t> shape(r.get(4));
    for (auto& d : shape) d = r.get(8);
    if (shape != t->shape()) throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    for (double& v : t->values()) v = std::bit_cast<double>(r.get(8));
  }
  if (i != params.size()) throw DataError("checkpoint is missing tensor '" + params[i].first + "'");
}

inline void save_checkpoint(const MultiHeadNet& net, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << checkpoint_bytes(net);
}

inline void load_checkpoint(MultiHeadNet& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  restore_checkpoint(net, ss.str());
}

}  // namespace hiershift
