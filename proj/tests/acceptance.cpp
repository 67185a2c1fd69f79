// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "lithopatch/lithopatch.hpp"

using namespace lithopatch;
namespace fs = std::filesystem;
namespace pl = lithopatch::pipeline;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << title;
  if (!o.detail.empty()) std::cout << "  [" << o.detail << "]";
  std::cout << std::endl;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Image random_image(Rng& rng, int w, int h, int ch) {
  Image img(w, h, ch);
  for (double& v : img.data()) v = rng.uniform();
  return img;
}

Image rotate90(const Image& p) {
  Image out(p.height(), p.width(), p.channels());
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      for (int c = 0; c < p.channels(); ++c) out.at(p.height() - 1 - y, x, c) = p.at(x, y, c);
  return out;
}

SegmentationMask random_blob_mask(Rng& rng, int w, int h) {
  SegmentationMask m(w, h);
  const int blobs = 1 + static_cast<int>(rng.index(3));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double a = rng.uniform(10, w), bb = rng.uniform(10, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (std::pow((x - cx) / a, 2) + std::pow((y - cy) / bb, 2) <= 1.0) m.set(x, y, true);
  }
  return m;
}

bool inside(const SegmentationMask& m, int x0, int y0, int size) {
  if (x0 < 0 || y0 < 0 || x0 + size > m.width() || y0 + size > m.height()) return false;
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x)
      if (!m.at(x, y)) return false;
  return true;
}

PatchDataset counted(const std::array<std::size_t, kNumClasses>& counts, int size = 1) {
  PatchDataset ds;
  std::size_t serial = 0;
  for (int k = 0; k < kNumClasses; ++k)
    for (std::size_t i = 0; i < counts[k]; ++i, ++serial) {
      PatchRecord r;
      r.id = "p" + std::to_string(serial);
      r.patch = Image8(size, size, 3, static_cast<std::uint8_t>(serial % 251));
      r.label = static_cast<StoneClass>(k);
      r.source_image_id = std::string(class_name(k)) + "_src";
      r.origin = GridOrigin{static_cast<int>(serial), 0};
      ds.records.push_back(std::move(r));
    }
  return ds;
}

FeatureMatrix random_rows(Rng& rng, std::size_t n, std::size_t d) {
  FeatureMatrix m;
  m.cols = d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(d);
    for (auto& v : x) v = rng.uniform(-1, 1);
    m.append(x, static_cast<int>(rng.index(kNumClasses)));
  }
  return m;
}

double exhaustive_best_gain(const FeatureMatrix& m, const std::vector<double>& g, const std::vector<double>& h,
                            double lambda) {
  double best = -std::numeric_limits<double>::infinity();
  double G = 0, H = 0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    G += g[i];
    H += h[i];
  }
  for (std::size_t f = 0; f < m.cols; ++f)
    for (std::size_t t = 0; t < m.rows; ++t) {
      double gl = 0, hl = 0;
      std::size_t left = 0;
      for (std::size_t i = 0; i < m.rows; ++i)
        if (m.at(i, f) <= m.at(t, f)) {
          gl += g[i];
          hl += h[i];
          ++left;
        }
      if (left == m.rows) continue;
      const double gr = G - gl, hr = H - hl;
      best = std::max(best, 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - G * G / (H + lambda)));
    }
  return best;
}

class Workspace {
 public:
  Workspace() {
    root_ = fs::temp_directory_path() / ("lithopatch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
};

pl::PipelineConfig end_to_end_config(const fs::path& root, const std::string& kind, const std::string& out) {
  const nlohmann::json j = {{"manifest", "fixtures/manifest.json"},
                            {"output_dir", out},
                            {"patch_size", 256},
                            {"max_overlap", 20},
                            {"balance", {{"mode", "up"}}},
                            {"augment", {{"factor", 8}}},
                            {"classifier", {{"kind", kind}}},
                            {"split", {{"group_by", "source_image"}}}};
  return pl::config_from_json(j, root);
}

const EvaluationReport* mixed_report(const std::vector<EvaluationReport>& reports) {
  for (const auto& r : reports)
    if (r.view_tag == "mixed") return &r;
  return nullptr;
}

}  // namespace

int main() {
  set_warning_sink([](std::string_view) {});
  Workspace ws;
  pl::RunOptions quiet;
  quiet.log = nullptr;
  make_fixtures(ws.root() / "fixtures", 7);

  report(1, "boosted trees reach weighted P and R >= 0.95 on the mixed test split within 300 s", [&] {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = pl::Runner(end_to_end_config(ws.root(), "boosted", "boosted_a"), quiet).run_all();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto* r = mixed_report(reports);
    o.require(r && r->weighted_precision && r->weighted_recall, "no mixed report");
    if (!o.pass) return o;
    o.detail = "P=" + fmt(*r->weighted_precision) + " R=" + fmt(*r->weighted_recall) + " t=" + fmt(secs) + "s";
    o.pass = *r->weighted_precision >= 0.95 && *r->weighted_recall >= 0.95 && secs <= 300.0;
    return o;
  });

  report(2, "random forest reaches weighted P and R >= 0.90 on the mixed test split", [&] {
    Outcome o;
    const auto reports = pl::Runner(end_to_end_config(ws.root(), "forest", "forest"), quiet).run_all();
    const auto* r = mixed_report(reports);
    o.require(r && r->weighted_precision && r->weighted_recall, "no mixed report");
    if (!o.pass) return o;
    o.detail = "P=" + fmt(*r->weighted_precision) + " R=" + fmt(*r->weighted_recall);
    o.pass = *r->weighted_precision >= 0.90 && *r->weighted_recall >= 0.90;
    return o;
  });

  report(3, "grid extraction: 512 px full mask gives 4 patches; 1000 random masks keep containment and overlap <= 20", [] {
    Outcome o;
    SourceImage s;
    s.id = "full";
    s.image = Image8(512, 512, 3, 100);
    s.mask = SegmentationMask(512, 512, true);
    const auto four = extract_grid_patches(s, 256, 20);
    o.require(four.size() == 4, "512 case gave " + std::to_string(four.size()));
    Rng rng(3);
    for (int t = 0; t < 1000 && o.pass; ++t) {
      const int w = 30 + static_cast<int>(rng.index(150)), h = 30 + static_cast<int>(rng.index(150));
      const int size = 21 + static_cast<int>(rng.index(40));
      const auto mask = random_blob_mask(rng, w, h);
      const auto origins = grid_origins(mask, size, 20);
      const auto b = mask_bounds(mask);
      std::size_t expected = 0;
      if (!b.empty())
        for (int y = b.y0; y + size <= h; y += size - 20)
          for (int x = b.x0; x + size <= w; x += size - 20) expected += inside(mask, x, y, size);
      o.require(origins.size() == expected, "lattice count mismatch in case " + std::to_string(t));
      for (std::size_t i = 0; i < origins.size(); ++i) {
        o.require(inside(mask, origins[i].x, origins[i].y, size), "patch leaves mask in case " + std::to_string(t));
        for (std::size_t j = i + 1; j < origins.size(); ++j) {
          const int ox = std::max(0, size - std::abs(origins[i].x - origins[j].x));
          const int oy = std::max(0, size - std::abs(origins[i].y - origins[j].y));
          o.require(std::min(ox, oy) <= 20, "overlap above 20 in case " + std::to_string(t));
        }
      }
    }
    return o;
  });

  report(4, "balancing: 870/920/470/420 -> 420 each; up-sampling to 750 -> 750 each; 5400 x 8 = 43200", [] {
    Outcome o;
    for (auto c : downsample_classes(counted({870, 920, 470, 420}), 1).class_counts())
      o.require(c == 420, "down-sampled count " + std::to_string(c));
    std::vector<SourceImage> sources;
    Rng rng(4);
    for (int k = 0; k < kNumClasses; ++k) {
      SourceImage s;
      s.id = std::string(class_name(k)) + "_src";
      s.image = Image8(96, 96, 3);
      for (auto& v : s.image.data()) v = static_cast<std::uint8_t>(rng.index(256));
      s.mask = SegmentationMask(96, 96, true);
      s.label = static_cast<StoneClass>(k);
      sources.push_back(std::move(s));
    }
    UpsampleOptions up;
    up.patch_size = 8;
    up.max_overlap = 2;
    up.target_count = 750;
    for (auto c : upsample_classes(counted({870, 920, 470, 420}, 8), sources, up, 2).class_counts())
      o.require(c == 750, "up-sampled count " + std::to_string(c));
    const auto aug = augment_dataset(counted({1350, 1350, 1350, 1350}, 4), 8, 5);
    o.require(aug.records.size() == 43200, "augmented count " + std::to_string(aug.records.size()));
    return o;
  });

  report(5, "whitening gives zero mean and unit sigma per channel; constant patches are handled", [] {
    Outcome o;
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
      const auto p = random_image(rng, 8 + static_cast<int>(rng.index(40)), 8 + static_cast<int>(rng.index(40)), 3);
      const auto w = whiten_patch(p);
      const double n = static_cast<double>(w.pixel_count());
      for (int c = 0; c < 3; ++c) {
        double m = 0, ss = 0;
        for (std::size_t i = 0; i < w.pixel_count(); ++i) m += w.data()[i * 3 + c];
        m /= n;
        for (std::size_t i = 0; i < w.pixel_count(); ++i) ss += std::pow(w.data()[i * 3 + c] - m, 2);
        o.require(std::abs(m) < 1e-6 && std::abs(std::sqrt(ss / n) - 1.0) < 1e-6, "moments off in patch " + std::to_string(t));
      }
    }
    const Image flat(16, 16, 3, 0.4);
    const auto flat_w = whiten_patch(flat);
    for (double v : flat_w.data()) o.require(v == 0.0, "constant patch not mapped to zero");
    try {
      whiten_patch(flat, DegeneratePolicy::raise);
      o.require(false, "strict mode did not raise");
    } catch (const Error& e) {
      o.require(e.code() == ErrorCode::DegenerateChannel, "wrong error code");
    }
    return o;
  });

  report(6, "LBP histograms are invariant to quarter turns, flips and monotone gray maps on 100 patches", [] {
    Outcome o;
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
      const auto g = random_image(rng, 16 + static_cast<int>(rng.index(32)), 16 + static_cast<int>(rng.index(32)), 1);
      const auto h = lbp_riu2(g);
      Image r = g;
      for (int k = 0; k < 3; ++k) {
        r = rotate90(r);
        o.require(lbp_riu2(r) == h, "rotation changed histogram");
      }
      o.require(lbp_riu2(flip(g, FlipAxis::horizontal)) == h, "horizontal flip changed histogram");
      o.require(lbp_riu2(flip(g, FlipAxis::vertical)) == h, "vertical flip changed histogram");
      Image mapped = g;
      const double a = rng.uniform(0.2, 3.0), b = rng.uniform(-1.0, 1.0);
      for (double& v : mapped.data()) v = a * v + b;
      o.require(lbp_riu2(mapped) == h, "gray map changed histogram");
    }
    return o;
  });

  report(7, "boosting leaves match -G/(H+lambda) within 1e-9 and root gains match exhaustive search", [] {
    Outcome o;
    Rng rng(7);
    double worst_leaf = 0.0, worst_gain = 0.0;
    for (int t = 0; t < 100; ++t) {
      const auto m = random_rows(rng, 2 + rng.index(31), 1 + rng.index(3));
      BoostParams p;
      p.n_rounds = 1;
      p.max_depth = 3;
      p.min_child_weight = 0;
      p.lambda = rng.uniform(0.1, 3.0);
      const auto model = train_boosted(m, p);
      for (int k = 0; k < kNumClasses; ++k)
        for (const auto& node : model.rounds[0][k].nodes) {
          if (!node.is_leaf()) continue;
          double G = 0, H = 0;
          for (std::size_t i = 0; i < m.rows; ++i) {
            if (&model.rounds[0][k].leaf_for(m.row(i)) != &node) continue;
            const double pk = 1.0 / kNumClasses;
            G += pk - (m.labels[i] == k);
            H += pk * (1 - pk);
          }
          worst_leaf = std::max(worst_leaf, std::abs(node.value[0] + G / (H + p.lambda)));
        }
    }
    for (int t = 0; t < 300; ++t) {
      const auto m = random_rows(rng, 2 + rng.index(7), 1 + rng.index(2));
      std::vector<double> g(m.rows), h(m.rows);
      for (std::size_t i = 0; i < m.rows; ++i) {
        g[i] = rng.uniform(-1, 1);
        h[i] = rng.uniform(0.01, 1);
      }
      BoostParams p;
      p.max_depth = 1;
      p.min_child_weight = 0;
      p.lambda = rng.uniform(0, 2);
      const auto tree = train_newton_tree(m, g, h, p);
      const double oracle = exhaustive_best_gain(m, g, h, p.lambda);
      if (oracle > 0) {
        o.require(!tree.nodes[0].is_leaf(), "missed a positive-gain split");
        if (!tree.nodes[0].is_leaf())
          worst_gain = std::max(worst_gain, std::abs(tree.nodes[0].gain - oracle) / std::max(1.0, oracle));
      } else {
        o.require(tree.nodes[0].is_leaf(), "split without positive gain");
      }
    }
    o.require(worst_leaf <= 1e-9, "leaf error " + fmt(worst_leaf));
    o.require(worst_gain <= 1e-9, "gain error " + fmt(worst_gain));
    if (o.pass) o.detail = "max leaf err " + fmt(worst_leaf) + ", max gain err " + fmt(worst_gain);
    return o;
  });

  report(8, "MLP head gradients agree with finite differences (<= 1e-4) and softmax rows sum to 1", [] {
    Outcome o;
    Rng rng(8);
    int accepted = 0, attempts = 0;
    double worst = 0.0;
    while (accepted < 20 && attempts < 200) {
      ++attempts;
      const int d = 3 + static_cast<int>(rng.index(6)), n = 2 + static_cast<int>(rng.index(5));
      auto m = init_head(d, rng.next_u64(), rng.bernoulli(0.5));
      for (Eigen::Index i = 0; i < kHidden1; ++i) {
        m.bn_gamma(i) = rng.uniform(0.5, 1.5);
        m.bn_beta(i) = rng.uniform(-0.3, 0.3);
      }
      Eigen::MatrixXd X(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
      std::vector<int> y(static_cast<std::size_t>(n));
      for (int& v : y) v = static_cast<int>(rng.index(kNumClasses));
      const auto cache = forward_batch(m, X, Mode::training);
      for (Eigen::Index i = 0; i < cache.P.rows(); ++i)
        o.require(std::abs(cache.P.row(i).sum() - 1.0) <= 1e-9, "softmax row sum off");
      if (relu_margin(cache, m.relu_after_fc2) < 1e-3) continue;
      const auto r = gradient_check(m, X, y);
      worst = std::max(worst, r.max_relative_error);
      ++accepted;
    }
    o.require(accepted == 20, "only " + std::to_string(accepted) + " instances away from ReLU kinks");
    o.require(worst <= 1e-4, "max relative error " + fmt(worst));
    if (o.pass) o.detail = "max relative error " + fmt(worst);
    return o;
  });

  report(9, "equal seeds give byte-identical ledgers; 10-fold stratification keeps per-class imbalance <= 1", [&] {
    Outcome o;
    pl::Runner(end_to_end_config(ws.root(), "boosted", "boosted_b"), quiet).run_all();
    const auto a = io::read_text(ws.root() / "boosted_a" / pl::kLedgerFile);
    const auto b = io::read_text(ws.root() / "boosted_b" / pl::kLedgerFile);
    o.require(!a.empty() && a == b, "ledgers differ");
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
      std::vector<int> labels;
      for (int c = 0; c < kNumClasses; ++c) labels.insert(labels.end(), 10 + rng.index(200), c);
      rng.shuffle(labels);
      const auto folds = stratified_kfold(labels, 10, rng.next_u64());
      for (int c = 0; c < kNumClasses; ++c) {
        std::size_t lo = labels.size(), hi = 0;
        for (const auto& f : folds) {
          const auto n = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [&](auto i) { return labels[i] == c; }));
          lo = std::min(lo, n);
          hi = std::max(hi, n);
        }
        o.require(hi - lo <= 1, "fold imbalance " + std::to_string(hi - lo));
      }
    }
    return o;
  });

  report(10, "weighted recall equals accuracy on 100 random matrices; [[5,1],[2,4]] example", [] {
    Outcome o;
    Rng rng(10);
    for (int t = 0; t < 100; ++t) {
      ConfusionMatrix cm(kNumClasses);
      for (int a = 0; a < kNumClasses; ++a)
        for (int p = 0; p < kNumClasses; ++p) cm.add(a, p, rng.index(50));
      if (cm.total() == 0) continue;
      const auto r = make_report(cm, "m", "mixed");
      const double acc = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
      const auto m = precision_recall(cm);
      const double oracle = weighted_average(std::span<const std::optional<double>>(m.recall), m.support);
      o.require(r.weighted_recall && std::abs(*r.weighted_recall - acc) < 1e-12 && std::abs(oracle - acc) < 1e-12,
                "weighted recall differs from accuracy");
    }
    ConfusionMatrix ex(2);
    ex.add(0, 0, 5);
    ex.add(0, 1, 1);
    ex.add(1, 0, 2);
    ex.add(1, 1, 4);
    const auto r = make_report(ex, "m", "mixed");
    o.require(std::abs(*r.per_class.precision[0] - 5.0 / 7) < 1e-12 && std::abs(*r.per_class.recall[1] - 4.0 / 6) < 1e-12,
              "per-class example values");
    o.require(std::abs(*r.weighted_precision - (5.0 / 7 + 4.0 / 5) / 2) < 1e-12, "weighted precision example");
    o.require(std::abs(*r.weighted_recall - 0.75) < 1e-12, "weighted recall example");
    return o;
  });

  report(11, "PCA: rank-1 data explains ratio 1; components orthonormal; projected variance equals eigenvalues", [] {
    Outcome o;
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
      const int d = 2 + static_cast<int>(rng.index(8)), n = 5 + static_cast<int>(rng.index(60));
      Eigen::VectorXd dir(d), off(d);
      for (int j = 0; j < d; ++j) {
        dir(j) = rng.normal();
        off(j) = rng.normal();
      }
      Eigen::MatrixXd line(n, d);
      for (int i = 0; i < n; ++i) line.row(i) = (off + rng.normal() * dir).transpose();
      o.require(std::abs(fit_projection(line, 1).explained_ratio(0) - 1.0) <= 1e-9, "rank-1 ratio");

      const int c = std::min(3, std::min(d, n - 1));
      Eigen::MatrixXd X(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal() * (1.0 + j);
      const auto model = fit_projection(X, c);
      const Eigen::MatrixXd gram = model.components * model.components.transpose();
      o.require((gram - Eigen::MatrixXd::Identity(c, c)).cwiseAbs().maxCoeff() <= 1e-9, "orthonormality");
      const auto Y = project(model, X);
      const Eigen::MatrixXd centred = Y.rowwise() - Y.colwise().mean();
      for (int k = 0; k < c; ++k) {
        const double var = centred.col(k).squaredNorm() / (n - 1);
        o.require(std::abs(var - model.eigenvalues(k)) <= 1e-6 * std::max(1.0, model.eigenvalues(k)), "projected variance");
      }
    }
    return o;
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
