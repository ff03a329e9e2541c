#include "mperl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "mperl/adam.hpp"
#include "mperl/error.hpp"

namespace mperl {

namespace {

std::vector<std::size_t> entity_rows(const KnowledgeGraph& kg,
                                     const std::vector<std::size_t>& labeled_rows) {
  std::vector<std::size_t> out;
  out.reserve(labeled_rows.size());
  for (std::size_t r : labeled_rows) out.push_back(kg.labeled[r].entity);
  return out;
}

// known types per entity across every split, for the filtered protocol
std::vector<std::vector<std::uint32_t>> known_types(const KnowledgeGraph& kg) {
  std::vector<std::vector<std::uint32_t>> known(kg.num_entities());
  for (const LabeledEntity& l : kg.labeled) {
    known[l.entity].insert(known[l.entity].end(), l.classes.begin(), l.classes.end());
  }
  return known;
}

std::string describe(const LossBreakdown& b, std::size_t epoch) {
  std::ostringstream os;
  os << "epoch " << epoch << ": total=" << b.total.item() << " err=" << b.err
     << " var=" << b.var << " unc=" << b.unc << " reg=" << b.reg << " delta=" << b.delta;
  return os.str();
}

}  // namespace

Tensor targets_for_rows(const KnowledgeGraph& kg, const std::vector<std::size_t>& labeled_rows) {
  const std::size_t k = kg.num_classes();
  Tensor y = Tensor::zeros({labeled_rows.size(), k});
  for (std::size_t i = 0; i < labeled_rows.size(); ++i) {
    const LabeledEntity& l = kg.labeled[labeled_rows[i]];
    const double w = 1.0 / static_cast<double>(l.classes.size());
    for (std::uint32_t c : l.classes) y.mutable_values()[i * k + c] = w;
  }
  return y;
}

RunResult train(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                const TrainConfig& cfg) {
  HyperParams hp = cfg.hp;
  hp.num_classes = kg.num_classes();
  hp.mode = kg.mode;
  hp.validate();

  LossConfig loss_cfg = cfg.loss;
  loss_cfg.lambda_p = hp.lambda_p;
  loss_cfg.mode = kg.mode;

  const std::vector<std::size_t> train_rows = kg.rows_of(Split::Train);
  if (train_rows.empty()) throw ContractError("train: empty training split");

  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(0);
  Rng epoch_rng = rng.fork(1);

  RunResult result;
  result.seed = cfg.seed;
  result.hp = hp;
  result.executed_steps = hp.resolved_steps();
  result.params = init_params(hp, kg.num_entities(), adj.num_relations(), init_rng.next_u64());

  std::vector<Tensor> params = result.params.all();
  for (Tensor& p : params) p.ensure_grad();
  Adam::Options opts;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  Adam optimizer(params, opts);

  std::vector<std::size_t> order(train_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // sampled neighborhoods are redrawn each epoch; inference later uses
    // the full adjacency
    std::optional<RelationalAdjacency> sampled;
    if (cfg.fanout > 0) sampled = adj.sample(cfg.fanout, epoch_rng);
    const RelationalAdjacency& train_adj = sampled ? *sampled : adj;

    if (cfg.batch_size > 0) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[epoch_rng.index(i)]);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double weight_sum = 0.0;
    const std::size_t batch = cfg.batch_size > 0 ? cfg.batch_size : train_rows.size();
    for (std::size_t start = 0; start < train_rows.size(); start += batch) {
      std::vector<std::size_t> batch_rows;
      for (std::size_t i = start; i < std::min(start + batch, train_rows.size()); ++i) {
        batch_rows.push_back(train_rows[order[i]]);
      }
      Tensor y = targets_for_rows(kg, batch_rows);
      Tape tape;
      LossBreakdown breakdown;
      {
        TapeScope scope(tape);
        ForwardResult fwd = forward(result.params, hp, train_adj, entity_rows(kg, batch_rows));
        breakdown = total_loss(fwd, entity_rows(kg, batch_rows), y, loss_cfg, epoch,
                               result.params);
        if (!std::isfinite(breakdown.total.item())) {
          throw std::runtime_error("non-finite training loss at " + describe(breakdown, epoch));
        }
        tape.backward(breakdown.total);
      }
      optimizer.step();
      optimizer.zero_grad();
      tape.clear();

      const double w = static_cast<double>(batch_rows.size());
      rec.total += breakdown.total.item() * w;
      rec.err += breakdown.err * w;
      rec.var += breakdown.var * w;
      rec.unc += breakdown.unc * w;
      rec.reg += breakdown.reg * w;
      rec.delta = breakdown.delta;
      weight_sum += w;
    }
    rec.total /= weight_sum;
    rec.err /= weight_sum;
    rec.var /= weight_sum;
    rec.unc /= weight_sum;
    rec.reg /= weight_sum;
    result.curve.push_back(rec);
  }

  if (kg.mode == TaskMode::SingleLabel) {
    result.classification = evaluate_classification(result.params, hp, kg, adj, Split::Test);
  } else {
    result.ranking = evaluate_ranking(result.params, hp, kg, adj, Split::Test);
  }
  return result;
}

ClassificationMetrics evaluate_classification(const ModelParams& params, const HyperParams& hp,
                                              const KnowledgeGraph& kg,
                                              const RelationalAdjacency& adj, Split split) {
  const std::vector<std::size_t> rows = kg.rows_of(split);
  if (rows.empty()) {
    throw ContractError(std::string("empty evaluation split: ") + split_name(split));
  }
  ForwardResult fwd = forward(params, hp, adj, entity_rows(kg, rows));
  const Tensor& yhat = fwd.final_output().yhat;
  const std::size_t k = yhat.cols();
  std::vector<std::uint32_t> pred(rows.size()), truth(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* row = yhat.values().data() + i * k;
    pred[i] = static_cast<std::uint32_t>(std::max_element(row, row + k) - row);
    truth[i] = kg.labeled[rows[i]].classes.at(0);
  }
  return classification_metrics(pred, truth, kg.num_classes());
}

RankingMetrics evaluate_ranking(const ModelParams& params, const HyperParams& hp,
                                const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                Split split) {
  const std::vector<std::size_t> rows = kg.rows_of(split);
  if (rows.empty()) {
    throw ContractError(std::string("empty evaluation split: ") + split_name(split));
  }
  ForwardResult fwd = forward(params, hp, adj, entity_rows(kg, rows));
  const Tensor& yhat = fwd.final_output().yhat;
  const std::size_t k = yhat.cols();
  const auto known = known_types(kg);
  RankingAccumulator acc;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const LabeledEntity& l = kg.labeled[rows[i]];
    std::vector<double> scores(yhat.values().begin() + i * k,
                               yhat.values().begin() + (i + 1) * k);
    for (std::uint32_t target : l.classes) {
      acc.add_rank(filtered_rank(scores, target, known[l.entity]));
    }
  }
  return acc.result();
}

namespace {

void aggregate(MetricsReport& report) {
  const std::size_t n = report.runs.size();
  if (n == 0) return;
  auto finish = [n](double sum, double sq) {
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    return std::make_pair(mean, std::sqrt(var));
  };
  if (report.mode == TaskMode::SingleLabel) {
    double acc = 0, acc2 = 0, f1 = 0, f12 = 0;
    for (const RunResult& r : report.runs) {
      acc += r.classification->accuracy;
      acc2 += r.classification->accuracy * r.classification->accuracy;
      f1 += r.classification->f1_macro;
      f12 += r.classification->f1_macro * r.classification->f1_macro;
    }
    std::tie(report.cls_mean.accuracy, report.cls_std.accuracy) = finish(acc, acc2);
    std::tie(report.cls_mean.f1_macro, report.cls_std.f1_macro) = finish(f1, f12);
  } else {
    double m = 0, m2 = 0, h1 = 0, h12 = 0, h3 = 0, h32 = 0, h10 = 0, h102 = 0;
    for (const RunResult& r : report.runs) {
      m += r.ranking->mrr;
      m2 += r.ranking->mrr * r.ranking->mrr;
      h1 += r.ranking->hit1;
      h12 += r.ranking->hit1 * r.ranking->hit1;
      h3 += r.ranking->hit3;
      h32 += r.ranking->hit3 * r.ranking->hit3;
      h10 += r.ranking->hit10;
      h102 += r.ranking->hit10 * r.ranking->hit10;
    }
    std::tie(report.rank_mean.mrr, report.rank_std.mrr) = finish(m, m2);
    std::tie(report.rank_mean.hit1, report.rank_std.hit1) = finish(h1, h12);
    std::tie(report.rank_mean.hit3, report.rank_std.hit3) = finish(h3, h32);
    std::tie(report.rank_mean.hit10, report.rank_std.hit10) = finish(h10, h102);
    report.rank_mean.assertions = report.runs.front().ranking->assertions;
  }
}

}  // namespace

MetricsReport run_repeats(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                          const TrainConfig& cfg, std::size_t repeats, std::size_t jobs) {
  if (repeats == 0) throw ContractError("run_repeats: repeats must be >= 1");
  MetricsReport report;
  report.mode = kg.mode;
  report.runs.resize(repeats);

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, repeats));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < repeats; i += workers) {
          TrainConfig run_cfg = cfg;
          run_cfg.seed = cfg.seed + i;
          report.runs[i] = train(kg, adj, run_cfg);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  aggregate(report);
  return report;
}

std::vector<SweepEntry> sweep_lambda(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                     const TrainConfig& base, const std::vector<double>& values,
                                     std::size_t repeats, std::size_t jobs) {
  std::vector<SweepEntry> out;
  for (double lp : values) {
    if (!(lp > 0.0 && lp <= 1.0)) throw ConfigError("lambda_p: sweep value must be in (0,1]");
    TrainConfig cfg = base;
    cfg.hp.lambda_p = lp;
    cfg.hp.max_steps = 0;  // re-derive the horizon from the prior
    SweepEntry entry;
    entry.lambda_p = lp;
    entry.steps = cfg.hp.resolved_steps();
    entry.report = run_repeats(kg, adj, cfg, repeats, jobs);
    entry.mean_curve.assign(base.epochs, 0.0);
    for (const RunResult& r : entry.report.runs) {
      for (std::size_t e = 0; e < r.curve.size(); ++e) {
        entry.mean_curve[e] += r.curve[e].total / static_cast<double>(repeats);
      }
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<AblationCell> ablate(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                 const TrainConfig& base, std::size_t repeats,
                                 std::size_t jobs) {
  std::vector<AblationCell> grid;
  const std::vector<std::pair<bool, bool>> cells = {
      {false, false}, {false, true}, {true, false}, {true, true}};
  for (const auto& [mp, erl] : cells) {
    TrainConfig cfg = base;
    if (!mp) cfg.hp.max_steps = 1;  // single step disables the halting process
    cfg.loss.kind = erl ? LossKind::Evidential : LossKind::CrossEntropy;
    AblationCell cell;
    cell.markov = mp;
    cell.evidential = erl;
    cell.report = run_repeats(kg, adj, cfg, repeats, jobs);
    grid.push_back(std::move(cell));
  }
  return grid;
}

void write_curve_csv(const std::string& path, const std::vector<EpochRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write curve csv " + path);
  out << "epoch,total,err,var,unc,reg,delta_t\n";
  for (const EpochRecord& r : curve) {
    out << r.epoch << ',' << r.total << ',' << r.err << ',' << r.var << ',' << r.unc << ','
        << r.reg << ',' << r.delta << '\n';
  }
}

}  // namespace mperl
