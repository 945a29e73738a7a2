#include "sgmpt/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <exception>
#include <numeric>
#include <random>

#include "sgmpt/errors.hpp"
#include "sgmpt/kernels.hpp"
#include "sgmpt/tensor_ops.hpp"

namespace sgmpt::mpt {

double batch_gradient(num::ParameterStore& params, std::span<const kg::TokenizedQuery> batch, const QueryLoss& loss,
                      Schedule schedule) {
  if (batch.empty()) throw TrainingError("empty training batch");
  const std::size_t n = batch.size();
  std::vector<double> losses(n);
  std::vector<num::GradientBuffer> buffers(n);
  if (schedule == Schedule::Serial || num::kernels::max_threads() <= 1) {
    for (std::size_t i = 0; i < n; ++i) losses[i] = loss(batch[i], &buffers[i]);
  } else {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        losses[i] = loss(batch[i], &buffers[i]);
      } catch (...) {
#pragma omp critical(sgmpt_batch_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  const double inv = 1.0 / static_cast<double>(n);
  params.zero_grad();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += losses[i];
    for (std::size_t p = 0; p < params.size(); ++p) {
      num::Parameter& param = params[p];
      if (const num::Tensor* g = buffers[i].find(param)) {
        auto dst = param.grad.values();
        const auto src = g->values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k] * inv;
      }
    }
  }
  return total * inv;
}

double train_step(num::ParameterStore& params, num::Adam& optimizer, std::span<const kg::TokenizedQuery> batch,
                  const QueryLoss& loss, Schedule schedule) {
  const double value = batch_gradient(params, batch, loss, schedule);
  optimizer.step(params);
  return value;
}

std::vector<double> train_epoch(num::ParameterStore& params, num::Adam& optimizer,
                                std::span<const kg::TokenizedQuery> queries, const QueryLoss& loss,
                                const EpochOptions& opts, std::uint64_t shuffle_seed) {
  if (opts.batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> step_losses;
  std::vector<kg::TokenizedQuery> batch;
  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t end = std::min(order.size(), start + opts.batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(queries[order[i]]);
    step_losses.push_back(train_step(params, optimizer, batch, loss, opts.schedule));
  }
  return step_losses;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t stage, std::size_t epoch) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + stage * 0xbf58476d1ce4e5b9ULL + epoch;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> train_stage(num::ParameterStore& params, std::span<const kg::TokenizedQuery> queries,
                                const QueryLoss& loss, const StageOptions& opts) {
  num::Adam optimizer({opts.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<double> losses;
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    const auto step = train_epoch(params, optimizer, queries, loss, opts.epoch, epoch_seed(opts.seed, opts.stage, e));
    for (double l : step) {
      if (!std::isfinite(l)) throw TrainingError("non-finite training loss in epoch " + std::to_string(e + 1));
    }
    losses.insert(losses.end(), step.begin(), step.end());
  }
  return losses;
}

}  // namespace sgmpt::mpt
