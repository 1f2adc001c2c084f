#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "facet/io.hpp"
#include "facet/losses.hpp"
#include "facet/network.hpp"
#include "oracles.hpp"

using facet::Graph;
using facet::Model;
using facet::NetConfig;
using facet::NodeId;
using facet::Tensor;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/facet_net_") + name;
}

// A miniature config in the same family as the presets, small enough for
// exhaustive finite-difference probing. It still exercises the deep-tap
// upsample + projection path.
NetConfig mini_config() {
  NetConfig c;
  c.input_size = 8;
  c.in_channels = 1;
  c.block_strides = {2, 2, 2};
  c.channel_widths = {{3}, {4, 5}, {6, 7}};
  c.K = 6;
  c.hc_resolution = 2;
  c.d_percent = 50.0;
  c.num_classes = 3;
  c.validate();
  return c;
}

// Finite differences are only meaningful at a generic parameter point: the
// production init (std 0.02, zero biases) leaves dead units at exactly the
// ReLU kink and response norms near zero, where the cosine losses'
// curvature explodes. Re-randomize at a healthy scale before probing.
void randomize_params(facet::Model& m, facet::Rng& rng) {
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const std::string& name = m.param_names()[i];
    Tensor& t = m.params_mut()[i];
    const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, "_b") == 0;
    for (Eigen::Index e = 0; e < t.size(); ++e)
      t.values[e] = is_bias ? rng.uniform(0.01, 0.1) : rng.uniform(-0.25, 0.25);
  }
}

// Records the Siamese two-branch total loss used in training.
NodeId record_total_loss(Graph& g, const Model& m, const Tensor& img_a, const Tensor& img_b,
                         int label) {
  std::vector<NodeId> ps = m.declare_params(g);
  Model::GraphNodes a = m.forward_graph(g, g.leaf(img_a), ps);
  Model::GraphNodes b = m.forward_graph(g, g.leaf(img_b), ps);
  facet::FeatureMask tau = facet::fad_mask(
      {{g.value(a.feature).values, g.value(b.feature).values}}, facet::FadMode::Count,
      double(std::max(1, m.config().K / 2)));
  NodeId l_id = facet::softmax_xent(g, a.logits, label);
  NodeId l_sadf = facet::sad_filter_loss(g, ps[std::size_t(m.bank_index())]);
  NodeId l_sadr = facet::sad_response_loss(g, a.psi, m.config().d_percent, 1.5);
  NodeId l_fad = facet::fad_loss(g, a.feature, b.feature, tau);
  NodeId l_occ = facet::occluded_id_loss(g, b.feature, tau, ps[std::size_t(m.fc_w_index())],
                                         ps[std::size_t(m.fc_b_index())], label);
  return facet::total_loss(g, {l_id, l_sadf, l_sadr, l_fad, l_occ},
                           {1.0, 1.0, 1.0, 1.0, 1.0});
}

}  // namespace

TEST_CASE("network config presets and validation") {
  SUBCASE("toy preset") {
    NetConfig c = NetConfig::toy(10);
    CHECK(c.input_size == 32);
    CHECK(c.K == 32);
    CHECK(c.hc_resolution == 8);
    CHECK(c.num_blocks() == 3);
    CHECK(c.block_resolution(0) == 16);
    CHECK(c.block_resolution(1) == 8);
    CHECK(c.block_resolution(2) == 4);
    CHECK(c.hc_block() == 1);
    CHECK(c.phi_channels() == 40);
  }

  SUBCASE("paper-scale preset arithmetic") {
    NetConfig c = NetConfig::paper(10);
    CHECK(c.input_size == 96);
    CHECK(c.K == 320);
    CHECK(c.hc_resolution == 24);
    CHECK(c.num_blocks() == 5);
    CHECK(c.block_resolution(0) == 96);
    CHECK(c.block_resolution(1) == 48);
    CHECK(c.block_resolution(2) == 24);
    CHECK(c.block_resolution(3) == 12);
    CHECK(c.block_resolution(4) == 6);
    CHECK(c.hc_block() == 2);
    CHECK(c.projection_width() == 192);
    CHECK(c.phi_channels() == 576);  // 192 * 3
  }

  SUBCASE("rejects inconsistent configs") {
    NetConfig c = NetConfig::toy(10);
    c.hc_resolution = 7;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = NetConfig::toy(10);
    c.block_strides = {3, 2, 2};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = NetConfig::toy(10);
    c.channel_widths.clear();
    c.block_strides.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = NetConfig::toy(10);
    c.K = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = NetConfig::toy(10);
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = NetConfig::toy(10);
    c.d_percent = 100.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    // No block at the hypercolumn resolution.
    c = NetConfig::toy(10);
    c.block_strides = {1, 2, 2};  // resolutions 32, 16, 8... still hits 8
    c.validate();
    c.block_strides = {1, 1, 2};  // resolutions 32, 32, 16 — never 8
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}

TEST_CASE("model build") {
  SUBCASE("paper preset shapes") {
    facet::Rng rng(1);
    Model m = Model::build(NetConfig::paper(10), rng);
    const Tensor& bank = m.params()[std::size_t(m.bank_index())];
    CHECK(bank.shape == std::vector<int>{320, 576, 3, 3});
    const Tensor& fcw = m.params()[std::size_t(m.fc_w_index())];
    CHECK(fcw.shape == std::vector<int>{10, 320});
  }

  SUBCASE("toy preset pinned parameter count") {
    facet::Rng rng(2);
    Model m = Model::build(NetConfig::toy(20), rng);
    // conv11 120, conv21 1744, conv22 2900, conv31 4344, conv32 6944,
    // proj3 660, bank 11520, fc 660.
    CHECK(m.num_parameters() == 28892);
  }

  SUBCASE("same seed builds bit-identical weights") {
    facet::Rng ra(7), rb(7), rc(8);
    Model a = Model::build(NetConfig::toy(5), ra);
    Model b = Model::build(NetConfig::toy(5), rb);
    Model c = Model::build(NetConfig::toy(5), rc);
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      if (!(a.params()[i].values == b.params()[i].values).all()) all_equal = false;
      if ((a.params()[i].values != c.params()[i].values).any()) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
  }

  SUBCASE("weights truncated at two standard deviations, biases zero") {
    facet::Rng rng(3);
    Model m = Model::build(NetConfig::toy(5), rng);
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const std::string& name = m.param_names()[i];
      const Tensor& t = m.params()[i];
      if (name.size() > 2 && name.compare(name.size() - 2, 2, "_b") == 0) {
        CHECK((t.values == 0.0).all());
      } else {
        CHECK(t.values.abs().maxCoeff() <= 0.04 + 1e-15);
        CHECK(t.values.abs().maxCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("model forward") {
  facet::Rng rng(11);

  SUBCASE("paper preset output shapes") {
    Model m = Model::build(NetConfig::paper(7), rng);
    facet::Rng ir(12);
    Tensor img = oracles::random_tensor({3, 96, 96}, ir, 0.0, 1.0);
    facet::ForwardResult r = m.forward(img);
    CHECK(r.phi.shape == std::vector<int>{576, 24, 24});
    CHECK(r.psi.shape == std::vector<int>{320, 24, 24});
    CHECK(r.psi_lmf.shape == std::vector<int>{320, 24, 24});
    CHECK(r.feature.shape == std::vector<int>{320});
    CHECK(r.logits.shape == std::vector<int>{7});
  }

  SUBCASE("zero weights and zero image give zero feature and uniform logits") {
    Model m = Model::build(NetConfig::toy(6), rng);
    for (Tensor& t : m.params_mut()) t.values.setZero();
    facet::ForwardResult r = m.forward(Tensor::zeros({1, 32, 32}));
    CHECK((r.feature.values == 0.0).all());
    CHECK((r.logits.values == 0.0).all());  // equal logits -> uniform softmax
  }

  SUBCASE("wrong input size is rejected") {
    Model m = Model::build(NetConfig::toy(6), rng);
    CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 16, 16})), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(Tensor::zeros({3, 32, 32})), std::invalid_argument);
  }

  SUBCASE("feature equals the channel means of the filtered responses") {
    Model m = Model::build(NetConfig::toy(6), rng);
    facet::Rng ir(13);
    Tensor img = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
    facet::ForwardResult r = m.forward(img);
    const int hc = m.config().hc_resolution;
    const int plane = hc * hc;
    for (int k = 0; k < m.config().K; ++k) {
      const double mean = r.psi_lmf.values.segment(k * plane, plane).mean();
      CHECK(r.feature.values[k] == doctest::Approx(mean).epsilon(1e-14));
    }
  }

  SUBCASE("filtered responses keep exactly the configured count per channel") {
    Model m = Model::build(NetConfig::toy(6), rng);
    facet::Rng ir(14);
    Tensor img = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
    facet::ForwardResult r = m.forward(img);
    const int hc = m.config().hc_resolution;
    const int plane = hc * hc;
    const int keep = facet::lmf_keep_count(plane, m.config().d_percent);
    for (int k = 0; k < m.config().K; ++k) {
      int nz = 0;
      for (int q = 0; q < plane; ++q)
        if (r.psi_lmf.values[k * plane + q] != 0.0) ++nz;
      CHECK(nz == keep);
    }
  }

  SUBCASE("response bank applies as a plain convolution of the descriptor") {
    Model m = Model::build(NetConfig::toy(6), rng);
    facet::Rng ir(15);
    Tensor img = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
    facet::ForwardResult r = m.forward(img);
    Tensor ref = oracles::conv2d_naive(r.phi, m.params()[std::size_t(m.bank_index())], 1, 1, 1);
    for (Eigen::Index i = 0; i < ref.size(); ++i)
      CHECK(r.psi.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-12));
  }

  SUBCASE("forward is deterministic") {
    Model m = Model::build(NetConfig::toy(6), rng);
    facet::Rng ir(16);
    Tensor img = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
    facet::ForwardResult a = m.forward(img);
    facet::ForwardResult b = m.forward(img);
    CHECK((a.feature.values == b.feature.values).all());
    CHECK((a.psi.values == b.psi.values).all());
  }
}

TEST_CASE("mini network passes an exhaustive finite-difference check") {
  facet::Rng rng(21);
  Model m = Model::build(mini_config(), rng);
  randomize_params(m, rng);
  facet::Rng ir(22);
  Tensor img_a = oracles::random_tensor({1, 8, 8}, ir, 0.0, 1.0);
  Tensor img_b = oracles::random_tensor({1, 8, 8}, ir, 0.0, 1.0);
  Graph g;
  NodeId loss = record_total_loss(g, m, img_a, img_b, 1);
  g.backward(loss);
  CHECK(facet::check_gradients(g, loss, 1e-5) < 1e-4);
}

TEST_CASE("toy network passes a sampled finite-difference check") {
  facet::Rng rng(31);
  Model m = Model::build(NetConfig::toy(5), rng);
  randomize_params(m, rng);
  facet::Rng ir(32);
  Tensor img_a = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
  Tensor img_b = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
  Graph g;
  NodeId loss = record_total_loss(g, m, img_a, img_b, 2);
  g.backward(loss);

  // Copy the analytic gradients, then probe a random sample of parameter
  // elements with central differences under frozen selections.
  std::vector<facet::Array> analytic;
  for (NodeId p : g.parameters()) analytic.push_back(g.grad(p));
  g.freeze_selections = true;
  facet::Rng pick(33);
  double worst = 0.0;
  for (int probe = 0; probe < 60; ++probe) {
    const std::size_t pi = pick.uniform_index(g.parameters().size());
    const NodeId p = g.parameters()[pi];
    const Eigen::Index e = Eigen::Index(pick.uniform_index(std::size_t(g.value(p).size())));
    const double fd = oracles::fd_grad(g, loss, p, e, 1e-5);
    worst = std::max(worst, oracles::rel_err(fd, analytic[pi][e]));
  }
  g.freeze_selections = false;
  g.recompute();
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip") {
  facet::Rng rng(41);
  Model m = Model::build(NetConfig::toy(9), rng);
  const std::string path = temp_path("ckpt.bin");
  facet::save_checkpoint(path, m);

  SUBCASE("loads back bit-identical weights and config") {
    Model r = facet::load_checkpoint(path);
    CHECK(r.config().input_size == m.config().input_size);
    CHECK(r.config().K == m.config().K);
    CHECK(r.config().d_percent == m.config().d_percent);
    CHECK(r.config().num_classes == 9);
    CHECK(r.config().channel_widths == m.config().channel_widths);
    REQUIRE(r.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      CHECK(r.param_names()[i] == m.param_names()[i]);
      CHECK(r.params()[i].shape == m.params()[i].shape);
      CHECK((r.params()[i].values == m.params()[i].values).all());
    }
  }

  SUBCASE("rewriting a loaded checkpoint is byte-identical") {
    Model r = facet::load_checkpoint(path);
    const std::string path2 = temp_path("ckpt2.bin");
    facet::save_checkpoint(path2, r);
    CHECK(facet::read_text_file(path) == facet::read_text_file(path2));
  }

  SUBCASE("truncated payload is rejected") {
    const std::string all = facet::read_text_file(path);
    const std::string cut = temp_path("ckpt_cut.bin");
    facet::write_text_file(cut, all.substr(0, all.size() - 16));
    CHECK_THROWS_AS(facet::load_checkpoint(cut), std::invalid_argument);
  }

  SUBCASE("wrong magic is rejected") {
    const std::string bad = temp_path("ckpt_bad.bin");
    facet::write_text_file(bad, "something else\n");
    CHECK_THROWS_AS(facet::load_checkpoint(bad), std::invalid_argument);
  }
}

TEST_CASE("siamese branches share parameter gradients") {
  facet::Rng rng(51);
  Model m = Model::build(NetConfig::toy(4), rng);
  facet::Rng ir(52);
  Tensor img_a = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);
  Tensor img_b = oracles::random_tensor({1, 32, 32}, ir, 0.0, 1.0);

  Graph g;
  std::vector<NodeId> ps = m.declare_params(g);
  Model::GraphNodes a = m.forward_graph(g, g.leaf(img_a), ps);
  Model::GraphNodes b = m.forward_graph(g, g.leaf(img_b), ps);
  NodeId l = facet::weighted_sum(
      g, {facet::softmax_xent(g, a.logits, 0), facet::softmax_xent(g, b.logits, 0)}, {1.0, 1.0});
  g.backward(l);
  // Both branches contribute to the same bank/classifier parameter nodes.
  CHECK(g.grad(ps[std::size_t(m.bank_index())]).abs().sum() > 0.0);
  CHECK(g.grad(ps[std::size_t(m.fc_w_index())]).abs().sum() > 0.0);
}
