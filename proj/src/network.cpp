#include "facet/network.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "facet/io.hpp"
#include "facet/losses.hpp"

namespace facet {

// ---- NetConfig ---------------------------------------------------------------

NetConfig NetConfig::toy(int num_classes) {
  NetConfig c;
  c.input_size = 32;
  c.in_channels = 1;
  c.block_strides = {2, 2, 2};
  c.channel_widths = {{12}, {16, 20}, {24, 32}};
  c.K = 32;
  c.hc_resolution = 8;
  c.d_percent = 75.0;
  c.num_classes = num_classes;
  c.validate();
  return c;
}

NetConfig NetConfig::paper(int num_classes) {
  NetConfig c;
  c.input_size = 96;
  c.in_channels = 3;
  c.block_strides = {1, 2, 2, 2, 2};
  c.channel_widths = {
      {32, 64}, {64, 64, 128}, {128, 96, 192}, {192, 128, 256}, {256, 160, 320}};
  c.K = 320;
  c.hc_resolution = 24;
  c.d_percent = 95.83;
  c.num_classes = num_classes;
  c.validate();
  return c;
}

int NetConfig::block_resolution(int b) const {
  require(b >= 0 && b < num_blocks(), "block index out of range");
  int r = input_size;
  for (int i = 0; i <= b; ++i) {
    require(r % block_strides[std::size_t(i)] == 0, "stride does not divide the resolution");
    r /= block_strides[std::size_t(i)];
  }
  return r;
}

int NetConfig::hc_block() const {
  int found = -1;
  for (int b = 0; b < num_blocks(); ++b)
    if (block_resolution(b) == hc_resolution) found = b;
  require(found >= 0, "no block runs at the hypercolumn resolution");
  return found;
}

int NetConfig::projection_width() const {
  return channel_widths[std::size_t(hc_block())].back();
}

int NetConfig::phi_channels() const {
  const int hb = hc_block();
  int ch = channel_widths[std::size_t(hb)].back();
  ch += (num_blocks() - 1 - hb) * projection_width();
  return ch;
}

void NetConfig::validate() const {
  require(input_size >= 4 && input_size % 4 == 0, "input size must be a positive multiple of 4");
  require(hc_resolution == input_size / 4,
          "hypercolumn resolution must be a quarter of the input size");
  require(in_channels >= 1, "input channel count must be positive");
  require(!channel_widths.empty(), "at least one conv block is required");
  require(channel_widths.size() == block_strides.size(),
          "one stride per conv block is required");
  for (std::size_t b = 0; b < channel_widths.size(); ++b) {
    require(!channel_widths[b].empty(), "each block needs at least one conv");
    for (int w : channel_widths[b]) require(w >= 1, "channel widths must be positive");
    require(block_strides[b] == 1 || block_strides[b] == 2, "block strides must be 1 or 2");
  }
  require(K >= 2, "feature dimension must be at least 2");
  require(num_classes >= 2, "at least two identity classes are required");
  lmf_keep_count(hc_resolution * hc_resolution, d_percent);  // validates the rate
  const int hb = hc_block();
  for (int b = hb + 1; b < num_blocks(); ++b) {
    const int r = block_resolution(b);
    require(r >= 1 && hc_resolution % r == 0,
            "deep blocks must divide the hypercolumn resolution evenly");
  }
}

// ---- Model ---------------------------------------------------------------------

Model Model::build(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;

  auto trunc_init = [&](Tensor& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = rng.truncated_normal(0.02);
  };
  auto add_param = [&](std::vector<int> shape, const std::string& name, bool init) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (init) trunc_init(t);
    m.params_.push_back(std::move(t));
    m.names_.push_back(name);
    return int(m.params_.size() - 1);
  };

  int in_ch = cfg.in_channels;
  for (int b = 0; b < cfg.num_blocks(); ++b) {
    std::vector<Conv> block;
    for (std::size_t i = 0; i < cfg.channel_widths[std::size_t(b)].size(); ++i) {
      const int out_ch = cfg.channel_widths[std::size_t(b)][i];
      const std::string base = "conv" + std::to_string(b + 1) + std::to_string(i + 1);
      Conv conv;
      conv.w = add_param({out_ch, in_ch, 3, 3}, base + "_w", true);
      conv.b = add_param({out_ch}, base + "_b", false);
      conv.stride = i == 0 ? cfg.block_strides[std::size_t(b)] : 1;
      block.push_back(conv);
      in_ch = out_ch;
    }
    m.blocks_.push_back(std::move(block));
  }

  const int hb = cfg.hc_block();
  const int proj_w = cfg.projection_width();
  for (int b = hb + 1; b < cfg.num_blocks(); ++b) {
    const std::string base = "proj" + std::to_string(b + 1);
    Conv conv;
    conv.w = add_param({proj_w, cfg.channel_widths[std::size_t(b)].back(), 1, 1},
                       base + "_w", true);
    conv.b = add_param({proj_w}, base + "_b", false);
    m.projections_.push_back(conv);
  }

  m.bank_index_ = add_param({cfg.K, cfg.phi_channels(), 3, 3}, "bank", true);
  m.fc_w_index_ = add_param({cfg.num_classes, cfg.K}, "fc_w", true);
  m.fc_b_index_ = add_param({cfg.num_classes}, "fc_b", false);
  return m;
}

Eigen::Index Model::num_parameters() const {
  Eigen::Index n = 0;
  for (const Tensor& t : params_) n += t.size();
  return n;
}

std::vector<NodeId> Model::declare_params(Graph& g) const {
  std::vector<NodeId> ids;
  ids.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    ids.push_back(g.parameter(params_[i], names_[i]));
  return ids;
}

Model::GraphNodes Model::forward_graph(Graph& g, NodeId image,
                                       const std::vector<NodeId>& param_nodes) const {
  require(param_nodes.size() == params_.size(), "parameter node list does not match the model");
  const Tensor& img = g.value(image);
  require(img.rank() == 3 && img.dim(0) == cfg_.in_channels && img.dim(1) == cfg_.input_size &&
              img.dim(2) == cfg_.input_size,
          "input image does not match the configured size");

  auto conv_block = [&](NodeId x, const Conv& c) {
    NodeId y = conv2d(g, x, param_nodes[std::size_t(c.w)], c.stride, Padding::Same);
    y = add_bias(g, y, param_nodes[std::size_t(c.b)]);
    return relu(g, y);
  };

  NodeId cur = image;
  std::vector<NodeId> block_out;
  for (const auto& block : blocks_) {
    for (const Conv& c : block) cur = conv_block(cur, c);
    block_out.push_back(cur);
  }

  const int hb = cfg_.hc_block();
  std::vector<NodeId> taps;
  taps.push_back(block_out[std::size_t(hb)]);
  for (int b = hb + 1; b < cfg_.num_blocks(); ++b) {
    const int factor = cfg_.hc_resolution / cfg_.block_resolution(b);
    NodeId up = upsample(g, block_out[std::size_t(b)], factor, UpsampleMode::Nearest);
    taps.push_back(conv_block(up, projections_[std::size_t(b - hb - 1)]));
  }

  GraphNodes out;
  out.phi = taps.size() == 1 ? taps[0] : concat_channels(g, taps);
  // Response bank: plain 3x3 convolution, no bias, no activation.
  out.psi = conv2d(g, out.phi, param_nodes[std::size_t(bank_index_)], 1, Padding::Same);
  out.psi_lmf = lmf(g, out.psi, cfg_.d_percent);
  out.feature = global_avg_pool(g, out.psi_lmf);
  out.logits = linear(g, out.feature, param_nodes[std::size_t(fc_w_index_)],
                      param_nodes[std::size_t(fc_b_index_)]);
  return out;
}

ForwardResult Model::forward(const Tensor& image) const {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params_.size());
  for (const Tensor& t : params_) ids.push_back(g.leaf(t));
  GraphNodes n = forward_graph(g, g.leaf(image), ids);
  ForwardResult r;
  r.phi = g.value(n.phi);
  r.psi = g.value(n.psi);
  r.psi_lmf = g.value(n.psi_lmf);
  r.feature = g.value(n.feature);
  r.logits = g.value(n.logits);
  return r;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string header_line(std::istream& in, const std::string& expect_prefix) {
  std::string line;
  require(bool(std::getline(in, line)), "checkpoint truncated in header");
  require(line.rfind(expect_prefix, 0) == 0,
          "checkpoint header: expected '" + expect_prefix + "', got '" + line + "'");
  return line.substr(expect_prefix.size());
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open checkpoint for writing: " + path);
  const NetConfig& c = m.config();
  out << "facet-checkpoint v1\n";
  out << "input_size " << c.input_size << "\n";
  out << "in_channels " << c.in_channels << "\n";
  out << "k " << c.K << "\n";
  out << "hc_resolution " << c.hc_resolution << "\n";
  out << "d_percent " << fmt_double(c.d_percent) << "\n";
  out << "num_classes " << c.num_classes << "\n";
  out << "blocks " << c.num_blocks() << "\n";
  for (int b = 0; b < c.num_blocks(); ++b) {
    out << "block " << c.block_strides[std::size_t(b)];
    for (int w : c.channel_widths[std::size_t(b)]) out << " " << w;
    out << "\n";
  }
  out << "params " << m.params().size() << "\n";
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    out << "param " << m.param_names()[i];
    for (int d : m.params()[i].shape) out << " " << d;
    out << "\n";
  }
  out << "data\n";
  for (const Tensor& t : m.params()) append_doubles(out, t.values);
  require(out.good(), "checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint: " + path);
  header_line(in, "facet-checkpoint v1");
  NetConfig c;
  c.input_size = std::stoi(header_line(in, "input_size "));
  c.in_channels = std::stoi(header_line(in, "in_channels "));
  c.K = std::stoi(header_line(in, "k "));
  c.hc_resolution = std::stoi(header_line(in, "hc_resolution "));
  c.d_percent = std::stod(header_line(in, "d_percent "));
  c.num_classes = std::stoi(header_line(in, "num_classes "));
  const int nblocks = std::stoi(header_line(in, "blocks "));
  require(nblocks >= 1, "checkpoint: block count must be positive");
  c.block_strides.clear();
  c.channel_widths.clear();
  for (int b = 0; b < nblocks; ++b) {
    std::istringstream row(header_line(in, "block "));
    int stride = 0;
    require(bool(row >> stride), "checkpoint: malformed block row");
    std::vector<int> widths;
    int w;
    while (row >> w) widths.push_back(w);
    c.block_strides.push_back(stride);
    c.channel_widths.push_back(std::move(widths));
  }

  Rng scratch(0);
  Model m = Model::build(c, scratch);

  const std::size_t nparams = std::stoul(header_line(in, "params "));
  require(nparams == m.params().size(), "checkpoint: parameter count does not match the config");
  for (std::size_t i = 0; i < nparams; ++i) {
    std::istringstream row(header_line(in, "param "));
    std::string name;
    require(bool(row >> name), "checkpoint: malformed param row");
    require(name == m.param_names()[i], "checkpoint: parameter name mismatch at " + name);
    std::vector<int> shape;
    int d;
    while (row >> d) shape.push_back(d);
    require(shape == m.params()[i].shape, "checkpoint: parameter shape mismatch at " + name);
  }
  header_line(in, "data");
  for (Tensor& t : m.params_mut()) t.values = read_doubles(in, t.size());
  return m;
}

}  // namespace facet
