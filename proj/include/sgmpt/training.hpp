#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sgmpt/adam.hpp"
#include "sgmpt/kg_data.hpp"
#include "sgmpt/parameter.hpp"

// Minibatch plumbing shared by every model trained on tokenized queries.
//
// Each query's gradient goes to its own buffer; the buffers are reduced in
// query order, so the serial and OpenMP drivers produce identical bits.
namespace sgmpt::mpt {

// Loss of one query; when `sink` is non-null the gradient is added to it.
using QueryLoss = std::function<double(const kg::TokenizedQuery& query, num::GradientBuffer* sink)>;

enum class Schedule { Serial, Parallel };

// Sets every parameter gradient to the batch-mean gradient and returns the
// batch-mean loss.
double batch_gradient(num::ParameterStore& params, std::span<const kg::TokenizedQuery> batch, const QueryLoss& loss,
                      Schedule schedule);

// batch_gradient followed by one optimizer step.
double train_step(num::ParameterStore& params, num::Adam& optimizer, std::span<const kg::TokenizedQuery> batch,
                  const QueryLoss& loss, Schedule schedule);

struct EpochOptions {
  std::size_t batch_size = 16;
  Schedule schedule = Schedule::Parallel;
};

// One pass over `queries` in an order shuffled by `shuffle_seed`. Returns the
// per-step losses.
std::vector<double> train_epoch(num::ParameterStore& params, num::Adam& optimizer,
                                std::span<const kg::TokenizedQuery> queries, const QueryLoss& loss,
                                const EpochOptions& opts, std::uint64_t shuffle_seed);

struct StageOptions {
  std::size_t epochs = 1;
  double learning_rate = 1e-3;
  EpochOptions epoch;
  std::uint64_t seed = 1;
  std::uint64_t stage = 0;  // distinguishes the shuffles of different stages
};

// Shuffle seed of one epoch of one stage.
std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t stage, std::size_t epoch);

// `epochs` passes with a fresh Adam; returns every step's loss in order.
std::vector<double> train_stage(num::ParameterStore& params, std::span<const kg::TokenizedQuery> queries,
                                const QueryLoss& loss, const StageOptions& opts);

}  // namespace sgmpt::mpt
