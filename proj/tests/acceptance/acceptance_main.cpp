// Acceptance suite: one pass/fail line per criterion. Heavier experiment
// criteria share their runs; use --only 1,2,... to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "rcr/checkpoint.hpp"
#include "rcr/config.hpp"
#include "rcr/dataset_io.hpp"
#include "rcr/distances.hpp"
#include "rcr/trainer.hpp"
#include "support/testutil.hpp"

using namespace rcr;
using rcr::testing::nn_tie_margin;
using rcr::testing::permutation;
using rcr::testing::permute_rows;
using rcr::testing::random_points;

namespace fs = std::filesystem;

namespace {

struct CriterionResult {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<std::string> g_notes;

void note(const std::string& line) {
  std::cout << "    " << line << "\n" << std::flush;
  g_notes.push_back(line);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// Criterion 1: set-distance oracles
// ---------------------------------------------------------------------------

double chamfer_reference(const Matrix<double>& a, const Matrix<double>& b) {
  auto one_way = [](const Matrix<double>& from, const Matrix<double>& to) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < to.rows(); ++j) {
        double d = 0.0;
        for (Eigen::Index c = 0; c < from.cols(); ++c) {
          const double diff = from(i, c) - to(j, c);
          d += diff * diff;
        }
        best = std::min(best, d);
      }
      total += best;
    }
    return total;
  };
  return one_way(a, b) + one_way(b, a);
}

double emd_reference(const Matrix<double>& a, const Matrix<double>& b) {
  std::vector<int> perm(static_cast<size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(perm[static_cast<size_t>(i)], c);
        d += diff * diff;
      }
      total += d;
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / 2.0;
}

bool criterion1(std::string& detail) {
  Rng rng(1001);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = trial % 2 == 0 ? 2 : 3;
    auto a = random_points<double>(1 + static_cast<int>(rng.uniform_index(16)), n, rng);
    auto b = random_points<double>(1 + static_cast<int>(rng.uniform_index(16)), n, rng);
    const double expected = chamfer_reference(a, b);
    const double actual = chamfer(a, b);
    const double rel = std::abs(actual - expected) / std::max(1.0, std::abs(expected));
    worst_rel = std::max(worst_rel, rel);
    if (rel > 1e-9) {
      detail = "chamfer mismatch at trial " + std::to_string(trial);
      return false;
    }
  }
  int emd_mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_index(6));
    const int n = trial % 2 == 0 ? 2 : 3;
    auto a = random_points<double>(k, n, rng);
    auto b = random_points<double>(k, n, rng);
    if (emd_exact(a, b) != emd_reference(a, b)) ++emd_mismatches;
  }
  std::ostringstream os;
  os << "1000 chamfer pairs worst rel err " << worst_rel << "; 500 emd pairs, "
     << emd_mismatches << " mismatches";
  detail = os.str();
  return emd_mismatches == 0;
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient suite
// ---------------------------------------------------------------------------

struct FdReport {
  double worst_rel = 0.0;
  double worst_abs = 0.0;
  Eigen::Index coords = 0;
};

double g_worst_abs_diff = 0.0;  // across every FD comparison, for reporting

template <class GetLoss>
FdReport fd_worst(Matrix<double>& values, const Matrix<double>& grads, GetLoss loss,
                  Rng& rng, int max_coords, double step = 1e-6) {
  FdReport report;
  const Eigen::Index total = values.size();
  const int coords = static_cast<int>(std::min<Eigen::Index>(total, max_coords));
  for (int t = 0; t < coords; ++t) {
    const Eigen::Index flat =
        coords == total
            ? t
            : static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(total)));
    const Eigen::Index i = flat / values.cols();
    const Eigen::Index j = flat % values.cols();
    const double saved = values(i, j);
    values(i, j) = saved + step;
    const double up = loss();
    values(i, j) = saved - step;
    const double down = loss();
    values(i, j) = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double diff = std::abs(numeric - grads(i, j));
    report.worst_abs = std::max(report.worst_abs, diff);
    ++report.coords;
    // Differences below the central-difference noise floor
    // (eps * |loss| / step) are indistinguishable from exact matches.
    if (diff <= 2e-7) continue;
    const double denom = std::max({std::abs(numeric), std::abs(grads(i, j)), 1e-8});
    report.worst_rel = std::max(report.worst_rel, diff / denom);
  }
  g_worst_abs_diff = std::max(g_worst_abs_diff, report.worst_abs);
  return report;
}

bool layer_gradients(double& worst) {
  Rng rng(2001);
  worst = 0.0;

  {  // dense
    DenseLayer<double> layer("fc", 7, 5);
    init_dense(layer.weight, layer.bias, rng);
    Matrix<double> x = random_points<double>(6, 7, rng);
    Matrix<double> seed = random_points<double>(6, 5, rng);
    layer.weight.zero_grad();
    layer.bias.zero_grad();
    Matrix<double> dx = dense_backward(layer, x, seed);
    auto loss = [&]() { return (dense_forward(layer, x).array() * seed.array()).sum(); };
    worst = std::max(worst, fd_worst(layer.weight.w, layer.weight.g, loss, rng, 20).worst_rel);
    worst = std::max(worst, fd_worst(layer.bias.w, layer.bias.g, loss, rng, 5).worst_rel);
    worst = std::max(worst, fd_worst(x, dx, loss, rng, 20).worst_rel);
  }
  {  // batchnorm (train statistics)
    BatchNormState<double> bn("bn", 4);
    for (int f = 0; f < 4; ++f) {
      bn.gamma.w(0, f) = rng.uniform(0.5, 1.5);
      bn.beta.w(0, f) = rng.uniform(-0.5, 0.5);
    }
    Matrix<double> x = random_points<double>(10, 4, rng, 2.0);
    Matrix<double> seed = random_points<double>(10, 4, rng);
    BatchNormCache<double> cache;
    batchnorm_forward(bn, x, Mode::kTrain, &cache);
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    Matrix<double> dx = batchnorm_backward(bn, cache, seed);
    auto loss = [&]() {
      return (batchnorm_forward(bn, x, Mode::kTrain).array() * seed.array()).sum();
    };
    worst = std::max(worst, fd_worst(x, dx, loss, rng, 20).worst_rel);
    worst = std::max(worst, fd_worst(bn.gamma.w, bn.gamma.g, loss, rng, 4).worst_rel);
    worst = std::max(worst, fd_worst(bn.beta.w, bn.beta.g, loss, rng, 4).worst_rel);
  }
  {  // relu away from the kink
    Matrix<double> x = random_points<double>(8, 6, rng);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (std::abs(x(i / 6, i % 6)) < 1e-3) x(i / 6, i % 6) = 0.25;
    Matrix<double> seed = random_points<double>(8, 6, rng);
    Matrix<double> dx = relu_backward(x, seed);
    auto loss = [&]() { return (relu_forward(x).array() * seed.array()).sum(); };
    worst = std::max(worst, fd_worst(x, dx, loss, rng, 20).worst_rel);
  }
  {  // dropout under a frozen mask
    Matrix<double> x = random_points<double>(6, 6, rng);
    Matrix<double> mask;
    Rng mask_rng(77);
    dropout_forward(x, 0.3, Mode::kTrain, mask_rng, &mask);
    Matrix<double> seed = random_points<double>(6, 6, rng);
    Matrix<double> dx = dropout_backward(mask, seed);
    auto loss = [&]() { return (x.cwiseProduct(mask).array() * seed.array()).sum(); };
    worst = std::max(worst, fd_worst(x, dx, loss, rng, 20).worst_rel);
  }
  {  // max aggregation away from ties
    Matrix<double> x = random_points<double>(12, 4, rng);
    auto out = max_aggregate(x, 2, 6);
    Matrix<double> seed = random_points<double>(2, 4, rng);
    Matrix<double> dx = max_aggregate_backward(out.argmax, seed, 6);
    auto loss = [&]() {
      return (max_aggregate(x, 2, 6).pooled.array() * seed.array()).sum();
    };
    worst = std::max(worst, fd_worst(x, dx, loss, rng, 20).worst_rel);
  }
  {  // softmax cross-entropy
    Matrix<double> logits = random_points<double>(5, 6, rng, 2.0);
    std::vector<int> labels = {1, 0, 5, 3, 3};
    auto out = softmax_cross_entropy(logits, labels);
    auto loss = [&]() { return softmax_cross_entropy(logits, labels).loss; };
    worst = std::max(worst, fd_worst(logits, out.grad_logits, loss, rng, 20).worst_rel);
  }
  return worst <= 1e-5;
}

struct ComposedInstance {
  ModelConfig cfg;
  std::unique_ptr<RcrModel<double>> model;
  Matrix<double> packed;
  std::vector<Matrix<double>> targets;
  std::vector<int> labels;
  int batch = 3, k = 5;

  ComposedInstance(std::uint64_t seed, bool reconstruction) {
    cfg.input_dims = 3;
    cfg.z_size = 14;
    cfg.decoder_points = 6;
    cfg.class_count = 2;
    cfg.reconstruction = reconstruction;
    Rng rng(seed);
    model = std::make_unique<RcrModel<double>>(cfg, rng);
    model->set_mode(Mode::kTrain);
    Rng data(seed * 31 + 7);
    packed = random_points<double>(batch * k, 3, data);
    for (int b = 0; b < batch; ++b) {
      targets.push_back(random_points<double>(4, 3, data));
      labels.push_back(b % 2);
    }
  }

  double loss() {
    Rng dropout_rng(4242);
    auto enc = model->encoder_forward(packed, batch, k);
    auto logits = model->classifier_forward(enc.z, &dropout_rng);
    Matrix<double> decoded;
    if (cfg.reconstruction) decoded = model->decoder_forward(enc.z);
    return model->joint_loss(targets, labels, decoded, logits).total;
  }

  /// Computes gradients and reports tie margins (max-pool runner-up gap and
  /// chamfer nearest-neighbor gap) so unstable instances can be rejected.
  double backward_with_margins(double& pool_margin, double& nn_margin) {
    Rng dropout_rng(4242);
    EncoderTape<double> enc_tape;
    ClassifierTape<double> cls_tape;
    DecoderTape<double> dec_tape;
    auto enc = model->encoder_forward(packed, batch, k, &enc_tape);
    auto logits = model->classifier_forward(enc.z, &dropout_rng, &cls_tape);
    Matrix<double> decoded;
    if (cfg.reconstruction) decoded = model->decoder_forward(enc.z, &dec_tape);
    Matrix<double> grad_logits, grad_decoded;
    auto jl = model->joint_loss(targets, labels, decoded, logits, &grad_logits,
                                cfg.reconstruction ? &grad_decoded : nullptr);
    model->zero_grads();
    Matrix<double> dz = model->classifier_backward(cls_tape, grad_logits);
    if (cfg.reconstruction) dz += model->decoder_backward(dec_tape, grad_decoded);
    model->encoder_backward(enc_tape, dz);

    pool_margin = std::numeric_limits<double>::infinity();
    for (int b = 0; b < batch; ++b)
      for (Eigen::Index f = 0; f < enc_tape.pre_pool.cols(); ++f) {
        double best = -std::numeric_limits<double>::infinity(), second = best;
        for (int p = 0; p < k; ++p) {
          const double v = enc_tape.pre_pool(b * k + p, f);
          if (v > best) {
            second = best;
            best = v;
          } else if (v > second) {
            second = v;
          }
        }
        pool_margin = std::min(pool_margin, best - second);
      }
    nn_margin = std::numeric_limits<double>::infinity();
    if (cfg.reconstruction)
      for (int b = 0; b < batch; ++b) {
        Eigen::Map<const Matrix<double>> recon(decoded.row(b).data(),
                                               cfg.decoder_points, 3);
        Matrix<double> recon_mat = recon;
        nn_margin = std::min(nn_margin, nn_tie_margin(targets[static_cast<size_t>(b)],
                                                      recon_mat));
      }
    return jl.total;
  }
};

bool composed_gradients(bool reconstruction, const char* label, double& worst_out) {
  for (std::uint64_t attempt = 0; attempt < 4; ++attempt) {
    ComposedInstance inst(3001 + attempt * 17, reconstruction);
    double pool_margin = 0.0, nn_margin = 0.0;
    inst.backward_with_margins(pool_margin, nn_margin);
    if (pool_margin < 1e-4 || (reconstruction && nn_margin < 1e-4)) {
      note(std::string(label) + ": regenerated tie-prone instance (attempt " +
           std::to_string(attempt) + ")");
      continue;
    }
    double worst = 0.0;
    Rng pick(4001 + attempt);
    for (auto* p : inst.model->parameters()) {
      if (!reconstruction && p->name.rfind("decoder.", 0) == 0) continue;
      worst = std::max(
          worst, fd_worst(p->w, p->g, [&]() { return inst.loss(); }, pick, 4).worst_rel);
    }
    worst_out = worst;
    if (worst <= 1e-4) return true;
    note(std::string(label) + ": attempt " + std::to_string(attempt) +
         " worst rel " + std::to_string(worst) + ", regenerating");
  }
  return false;
}

bool chamfer_decoder_gradient(double& worst_out) {
  Rng rng(5001);
  ModelConfig cfg;
  cfg.input_dims = 3;
  cfg.z_size = 12;
  cfg.decoder_points = 6;
  cfg.class_count = 2;
  RcrModel<double> model(cfg, rng);
  model.set_mode(Mode::kEval);
  Rng data(5002);
  worst_out = 0.0;
  int done = 0;
  while (done < 4) {
    Matrix<double> z = random_points<double>(1, 12, data);
    Matrix<double> target = random_points<double>(7, 3, data);
    DecoderTape<double> tape;
    Matrix<double> decoded = model.decoder_forward(z, &tape);
    Eigen::Map<const Matrix<double>> recon(decoded.row(0).data(), 6, 3);
    Matrix<double> recon_mat = recon;
    if (nn_tie_margin(target, recon_mat) < 1e-4) continue;
    ++done;
    auto grads = chamfer_gradient(target, recon_mat);
    Matrix<double> grad_decoded(1, 18);
    Eigen::Map<Matrix<double>> as_cloud(grad_decoded.row(0).data(), 6, 3);
    as_cloud = grads.second;
    for (auto* p : model.parameters()) p->zero_grad();
    Matrix<double> dz = model.decoder_backward(tape, grad_decoded);
    auto loss = [&]() {
      Matrix<double> out = model.decoder_forward(z);
      Eigen::Map<const Matrix<double>> cloud(out.row(0).data(), 6, 3);
      Matrix<double> cloud_mat = cloud;
      return chamfer(target, cloud_mat);
    };
    Rng pick(5003 + static_cast<std::uint64_t>(done));
    worst_out = std::max(worst_out, fd_worst(z, dz, loss, pick, 12).worst_rel);
  }
  return worst_out <= 1e-4;
}

bool criterion2(std::string& detail) {
  double layer_worst = 0.0, ce_worst = 0.0, chamfer_worst = 0.0, joint_worst = 0.0;
  const bool layers_ok = layer_gradients(layer_worst);
  note("layer suite worst rel err " + std::to_string(layer_worst) + " (tol 1e-5)");
  const bool ce_ok = composed_gradients(false, "cross-entropy path", ce_worst);
  note("cross-entropy path worst rel err " + std::to_string(ce_worst) + " (tol 1e-4)");
  const bool ch_ok = chamfer_decoder_gradient(chamfer_worst);
  note("chamfer-through-decoder worst rel err " + std::to_string(chamfer_worst) +
       " (tol 1e-4)");
  const bool joint_ok = composed_gradients(true, "joint path", joint_worst);
  note("joint path worst rel err " + std::to_string(joint_worst) + " (tol 1e-4)");
  std::ostringstream os;
  os << "worst rel: layers " << layer_worst << " | ce " << ce_worst << " | chamfer "
     << chamfer_worst << " | joint " << joint_worst << " (worst abs diff "
     << g_worst_abs_diff << ")";
  detail = os.str();
  return layers_ok && ce_ok && ch_ok && joint_ok;
}

// ---------------------------------------------------------------------------
// Criterion 3: encoder invariances
// ---------------------------------------------------------------------------

bool criterion3(std::string& detail) {
  Rng init(6001);
  ModelConfig cfg;
  cfg.input_dims = 3;
  cfg.z_size = 64;
  cfg.decoder_points = 8;
  cfg.class_count = 2;
  RcrModel<float> model(cfg, init);
  model.set_mode(Mode::kEval);
  Rng data(6002);
  float worst_perm = 0.0f, worst_dup = 0.0f;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 10 + static_cast<int>(data.uniform_index(60));
    auto pts = random_points<float>(k, 3, data);
    auto base = model.encoder_forward(pts, 1, k);

    auto shuffled =
        model.encoder_forward(permute_rows(pts, permutation(k, data)), 1, k);
    worst_perm = std::max(worst_perm, (base.z - shuffled.z).cwiseAbs().maxCoeff());

    Matrix<float> dup(k + 4, 3);
    dup.topRows(k) = pts;
    for (int d = 0; d < 4; ++d)
      dup.row(k + d) =
          pts.row(static_cast<int>(data.uniform_index(static_cast<std::uint64_t>(k))));
    auto extended = model.encoder_forward(dup, 1, k + 4);
    worst_dup = std::max(worst_dup, (base.z - extended.z).cwiseAbs().maxCoeff());
  }
  std::ostringstream os;
  os << "100 trials each: permutation max dev " << worst_perm << ", duplicate max dev "
     << worst_dup << " (tol 1e-6)";
  detail = os.str();
  return worst_perm <= 1e-6f && worst_dup <= 1e-6f;
}

// ---------------------------------------------------------------------------
// Criterion 4: classifier expansion
// ---------------------------------------------------------------------------

bool criterion4(std::string& detail) {
  Rng init(7001);
  ModelConfig cfg;
  cfg.input_dims = 3;
  cfg.z_size = 32;
  cfg.decoder_points = 8;
  cfg.class_count = 2;
  RcrModel<float> expanded(cfg, init);
  expanded.set_mode(Mode::kEval);

  Rng data(7002);
  std::vector<Matrix<float>> zs;
  std::vector<Matrix<float>> before;
  for (int i = 0; i < 100; ++i) {
    zs.push_back(random_points<float>(1, 32, data));
    before.push_back(expanded.classifier_forward(zs.back()));
  }
  Rng grow(7003);
  expanded.expand_classifier(4, grow);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    auto after = expanded.classifier_forward(zs[static_cast<size_t>(i)]);
    for (int c = 0; c < 2; ++c)
      if (before[static_cast<size_t>(i)](0, c) != after(0, c)) ++mismatches;
  }

  // Double expansion vs single expansion on preserved coordinates.
  Rng init_a(7004), init_b(7004);
  RcrModel<float> twice(cfg, init_a), once(cfg, init_b);
  twice.set_mode(Mode::kEval);
  once.set_mode(Mode::kEval);
  Rng ga(7005), gb(7006);
  twice.expand_classifier(4, ga);
  twice.expand_classifier(6, ga);
  once.expand_classifier(6, gb);
  int preserved_mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    auto a = twice.classifier_forward(zs[static_cast<size_t>(i)]);
    auto b = once.classifier_forward(zs[static_cast<size_t>(i)]);
    for (int c = 0; c < 2; ++c)
      if (a(0, c) != b(0, c)) ++preserved_mismatches;
  }
  std::ostringstream os;
  os << "100 inputs: " << mismatches << " bit mismatches after expansion, "
     << preserved_mismatches << " double-vs-single mismatches";
  detail = os.str();
  return mismatches == 0 && preserved_mismatches == 0;
}

// ---------------------------------------------------------------------------
// Criterion 6: storage audit
// ---------------------------------------------------------------------------

bool criterion6(std::string& detail) {
  Rng rng(8001);
  LabeledDataset full;
  full.class_count = 4;
  for (int i = 0; i < 100; ++i)
    full.samples.push_back({rcr::testing::random_cloud<float>(2048, 3, rng), i % 4});
  CompressionPolicy policy;
  policy.points_to_keep = 100;
  Rng draw(8002);
  auto compressed = compress_random(full, policy, draw);

  const auto dir = fs::temp_directory_path();
  const std::string full_path = dir / "rcr_accept_full.pcs";
  const std::string store_path = dir / "rcr_accept_store.pcs";
  write_dataset(full, full_path);
  write_dataset(compressed, store_path);
  const double ratio = static_cast<double>(fs::file_size(store_path)) /
                       static_cast<double>(fs::file_size(full_path));
  fs::remove(full_path);
  fs::remove(store_path);
  std::ostringstream os;
  os << "serialized store is " << ratio * 100.0 << "% of the uncompressed payload";
  detail = os.str();
  return ratio <= 0.05;
}

// ---------------------------------------------------------------------------
// Criteria 7 + 8: desk-scale experiments (runs shared)
// ---------------------------------------------------------------------------

struct ExperimentCell {
  std::string name;
  Method method = Method::kRcr;
  int z_size = 256;
  CompressionStrategy strategy = CompressionStrategy::kRandom;
  bool reconstruction = true;
};

struct CellOutcome {
  std::vector<double> final_class_il;  // micro at t = 5, one per seed
  std::vector<double> final_task_il;
  std::vector<double> task1_drop;      // class-il acc(1,1) - acc(5,1)
  std::vector<AccuracyMatrix> matrices;
};

RunSpec desk_spec(const ExperimentCell& cell, std::uint64_t seed) {
  RunSpec spec;
  spec.model.input_dims = 3;
  spec.model.z_size = cell.z_size;
  spec.model.decoder_points = 512;
  spec.model.reconstruction = cell.reconstruction;
  spec.train.max_epochs = 150;
  spec.train.patience_epochs = 30;
  spec.train.batch_size = 32;
  spec.train.seed = seed;
  spec.compression.strategy = cell.strategy;
  spec.compression.points_to_keep = 50;
  spec.augment = AugmentPolicy::defaults_for(3);
  return spec;
}

std::map<std::string, CellOutcome> g_cells;

void run_experiments() {
  Rng train_gen(9001), test_gen(9002);
  note("generating desk benchmark: 10 classes x 200 train / 50 test, 512 points");
  const LabeledDataset train = gen_synthetic(10, 200, 512, train_gen);
  const LabeledDataset test = gen_synthetic(10, 50, 512, test_gen);
  const TaskSchedule schedule =
      build_task_schedule(train, test, 2, Ordering::kSplitOrder);

  const std::vector<ExperimentCell> cells = {
      {"rcr", Method::kRcr, 256, CompressionStrategy::kRandom, true},
      {"fine_tune", Method::kFineTune, 256, CompressionStrategy::kRandom, true},
      {"incremental", Method::kIncremental, 256, CompressionStrategy::kRandom, true},
      {"z64_random_recon", Method::kRcr, 64, CompressionStrategy::kRandom, true},
      {"z64_random_norecon", Method::kRcr, 64, CompressionStrategy::kRandom, false},
      {"z256_argmax_recon", Method::kRcr, 256, CompressionStrategy::kArgmax, true},
  };
  for (const auto& cell : cells) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      const auto t0 = std::chrono::steady_clock::now();
      RunOutput out = run_method(cell.method, train, test, schedule,
                                 desk_spec(cell, seed));
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      auto& outcome = g_cells[cell.name];
      const auto* class_avg = out.matrix.find_average(5, Scenario::kClassIl);
      const auto* task_avg = out.matrix.find_average(5, Scenario::kTaskIl);
      const auto* first = out.matrix.find(1, 1, Scenario::kClassIl);
      const auto* last = out.matrix.find(5, 1, Scenario::kClassIl);
      outcome.final_class_il.push_back(class_avg->micro);
      outcome.final_task_il.push_back(task_avg->micro);
      outcome.task1_drop.push_back(first->accuracy - last->accuracy);
      outcome.matrices.push_back(out.matrix);
      int epochs = 0;
      for (const auto& trace : out.traces) epochs += static_cast<int>(trace.epochs.size());
      std::ostringstream os;
      os << cell.name << " seed " << seed << ": class-il "
         << detail::format_fixed6(class_avg->micro) << ", task-il "
         << detail::format_fixed6(task_avg->micro) << ", " << epochs
         << " epochs, " << static_cast<int>(secs) << "s";
      note(os.str());
    }
  }
}

bool criterion7(std::string& detail) {
  const auto& rcr_cell = g_cells.at("rcr");
  const auto& ft = g_cells.at("fine_tune");
  const auto& inc = g_cells.at("incremental");
  const double rcr_class = median3(rcr_cell.final_class_il);
  const double ft_class = median3(ft.final_class_il);
  const double inc_class = median3(inc.final_class_il);
  const double rcr_task = median3(rcr_cell.final_task_il);
  const double ft_drop = median3(ft.task1_drop);

  std::ostringstream os;
  os << "median final class-il: incremental " << detail::format_fixed6(inc_class)
     << " >= rcr " << detail::format_fixed6(rcr_class) << " >= fine_tune "
     << detail::format_fixed6(ft_class) << "; rcr-ft gap "
     << detail::format_fixed6(rcr_class - ft_class) << " (need >= 0.30); rcr task-il "
     << detail::format_fixed6(rcr_task) << " (need >= 0.90); fine_tune task-1 drop "
     << detail::format_fixed6(ft_drop) << " (need >= 0.25)";
  detail = os.str();
  return inc_class >= rcr_class && rcr_class >= ft_class &&
         (rcr_class - ft_class) >= 0.30 && rcr_task >= 0.90 && ft_drop >= 0.25;
}

bool criterion8(std::string& detail) {
  const double recon_on = median3(g_cells.at("z64_random_recon").final_class_il);
  const double recon_off = median3(g_cells.at("z64_random_norecon").final_class_il);
  const double random_256 = median3(g_cells.at("rcr").final_class_il);
  const double argmax_256 = median3(g_cells.at("z256_argmax_recon").final_class_il);
  std::ostringstream os;
  os << "z=64 random: reconstruction on " << detail::format_fixed6(recon_on)
     << " >= off " << detail::format_fixed6(recon_off)
     << "; rehearsal 50: random " << detail::format_fixed6(random_256)
     << " >= argmax " << detail::format_fixed6(argmax_256);
  detail = os.str();
  return recon_on >= recon_off && random_256 >= argmax_256;
}

// ---------------------------------------------------------------------------
// Criterion 5: schedule/scenario properties (uses the recorded runs)
// ---------------------------------------------------------------------------

bool criterion5(std::string& detail) {
  // Disjointness over a spread of generated schedules.
  Rng rng(10001);
  int schedules_checked = 0;
  bool disjoint = true;
  for (int classes : {4, 6, 9, 10}) {
    LabeledDataset train, test;
    train.class_count = test.class_count = classes;
    for (int c = 0; c < classes; ++c) {
      const int n = 2 + static_cast<int>(rng.uniform_index(6));
      for (int i = 0; i < n; ++i)
        train.samples.push_back({rcr::testing::random_cloud<float>(4, 3, rng), c});
      test.samples.push_back({rcr::testing::random_cloud<float>(4, 3, rng), c});
    }
    for (auto ordering : {Ordering::kByPopulation, Ordering::kSplitOrder})
      for (int cpt : {2, 3}) {
        if (classes / cpt < 1) continue;
        auto schedule = build_task_schedule(train, test, cpt, ordering);
        ++schedules_checked;
        std::set<int> seen;
        for (const auto& task : schedule.tasks)
          for (int c : task.classes)
            if (!seen.insert(c).second) disjoint = false;
      }
  }

  // Split order on an equal-population 10-class set: (0,1), (2,3), ...
  LabeledDataset train, test;
  train.class_count = test.class_count = 10;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 5; ++i)
      train.samples.push_back({rcr::testing::random_cloud<float>(4, 2, rng), c});
    test.samples.push_back({rcr::testing::random_cloud<float>(4, 2, rng), c});
  }
  auto split = build_task_schedule(train, test, 2, Ordering::kSplitOrder);
  bool split_ok = split.task_count() == 5;
  for (int t = 0; t < split.task_count() && split_ok; ++t)
    split_ok = split.tasks[static_cast<size_t>(t)].classes ==
               std::vector<int>({2 * t, 2 * t + 1});

  // Task-IL micro >= Class-IL micro on every recorded experiment run.
  int averages_checked = 0;
  bool ordering_ok = true;
  for (const auto& [name, outcome] : g_cells)
    for (const auto& matrix : outcome.matrices)
      for (const auto& avg : matrix.averages) {
        if (avg.scenario != Scenario::kClassIl) continue;
        const auto* task_il = matrix.find_average(avg.tasks_trained, Scenario::kTaskIl);
        ++averages_checked;
        if (!task_il || task_il->micro < avg.micro) ordering_ok = false;
      }

  std::ostringstream os;
  os << schedules_checked << " schedules disjoint; split order exact; task-il >= "
     << "class-il on " << averages_checked << " recorded averages";
  detail = os.str();
  return disjoint && split_ok && ordering_ok && averages_checked > 0;
}

// ---------------------------------------------------------------------------
// Criterion 9: cmd_train determinism through the CLI
// ---------------------------------------------------------------------------

bool criterion9(std::string& detail) {
  const fs::path dir = fs::temp_directory_path() / "rcr_accept_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto shell = [&](const std::string& args) {
    const std::string cmd = std::string(RCR_CLI_PATH) + " " + args + " > " +
                            (dir / "log.txt").string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  if (shell("gen-data --classes 6 --per-class 12 --points 64 --seed 11 --out " +
            (dir / "bench.pcs").string()) != 0 ||
      shell("gen-data --classes 6 --per-class 4 --points 64 --seed 12 --out " +
            (dir / "bench_test.pcs").string()) != 0) {
    detail = "dataset generation through the CLI failed";
    return false;
  }
  {
    std::ofstream os(dir / "run.cfg");
    os << "dataset_path = " << (dir / "bench.pcs").string() << "\n"
       << "z_size = 32\ndecoder_points = 64\nrehearsal_points = 16\n"
       << "batch_size = 8\nmax_epochs = 4\npatience = 4\nseed = 21\n";
  }
  if (shell("train --config " + (dir / "run.cfg").string() + " --out " +
            (dir / "a").string()) != 0) {
    detail = "first cmd_train failed";
    return false;
  }
  // Re-run from the resolved echo, twice.
  if (shell("train --config " + (dir / "a" / "resolved_config.txt").string() +
            " --out " + (dir / "b").string()) != 0 ||
      shell("train --config " + (dir / "a" / "resolved_config.txt").string() +
            " --out " + (dir / "c").string()) != 0) {
    detail = "echo-driven cmd_train failed";
    return false;
  }
  auto bytes = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
  };
  const bool identical = bytes(dir / "a" / "matrix.csv") == bytes(dir / "b" / "matrix.csv") &&
                         bytes(dir / "b" / "matrix.csv") == bytes(dir / "c" / "matrix.csv");
  detail = identical ? "three executions produced byte-identical matrix.csv"
                     : "matrix.csv bytes differ between executions";
  fs::remove_all(dir);
  return identical;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::istringstream is(argv[++i]);
      std::string tok;
      while (std::getline(is, tok, ',')) only.insert(std::stoi(tok));
    }
  }
  auto enabled = [&](int id) { return only.empty() || only.count(id) > 0; };

  std::vector<CriterionResult> results;
  auto run = [&](int id, const std::string& title, auto&& fn) {
    if (!enabled(id)) return;
    std::cout << "criterion " << id << " (" << title << ") ...\n" << std::flush;
    CriterionResult r;
    r.id = id;
    const auto t0 = std::chrono::steady_clock::now();
    r.pass = fn(r.detail);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(r);
  };

  run(1, "set-distance oracles", criterion1);
  run(2, "gradient suite", criterion2);
  run(3, "permutation/duplicate invariance", criterion3);
  run(4, "classifier expansion", criterion4);
  run(6, "storage claim", criterion6);
  run(9, "cmd_train determinism", criterion9);

  if (enabled(5) || enabled(7) || enabled(8)) {
    const auto t0 = std::chrono::steady_clock::now();
    run_experiments();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "experiment block took " << static_cast<int>(secs)
              << "s on a single core\n";
    run(7, "desk-scale forgetting experiment", criterion7);
    run(8, "ablation directionality", criterion8);
    run(5, "schedule/scenario properties", criterion5);
  }

  std::sort(results.begin(), results.end(),
            [](const CriterionResult& a, const CriterionResult& b) { return a.id < b.id; });
  bool all_pass = true;
  std::cout << "\n";
  for (const auto& r : results) {
    std::printf("[%s] criterion %d (%.1fs): %s\n", r.pass ? "PASS" : "FAIL", r.id,
                r.seconds, r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}
