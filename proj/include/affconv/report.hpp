#pragma once

// JSON and CSV emitters for training output. Needs vendor/json.hpp on the
// include path (link affconv_vendor).

#include <string>
#include <vector>

#include <json.hpp>

#include "affconv/io.hpp"
#include "affconv/training.hpp"

namespace affconv::train {

inline nlohmann::ordered_json metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["task"] = std::string(to_string(m.task));
  j["samples"] = m.samples;
  j["loss"] = m.loss;
  switch (m.task) {
    case Task::Reconstruction:
      j["mean_error"] = m.error.mean;
      j["std_error"] = m.error.std;
      j["median_error"] = m.error.median;
      j["vertices"] = m.error.count;
      break;
    case Task::Correspondence: {
      j["accuracy"] = m.accuracy;
      auto curve = nlohmann::ordered_json::array();
      for (const auto& p : m.curve) curve.push_back({{"radius", p.radius}, {"accuracy", p.accuracy}});
      j["curve"] = curve;
      break;
    }
    case Task::Classification:
      j["accuracy"] = m.accuracy;
      break;
  }
  return j;
}

inline std::string metrics_to_json(const Metrics& m) { return metrics_json(m).dump(2) + "\n"; }

inline Metrics metrics_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    Metrics m;
    m.task = parse_task(j.at("task").get<std::string>());
    m.samples = j.at("samples").get<std::size_t>();
    m.loss = j.at("loss").get<double>();
    if (m.task == Task::Reconstruction) {
      m.error.mean = j.at("mean_error").get<double>();
      m.error.std = j.at("std_error").get<double>();
      m.error.median = j.at("median_error").get<double>();
      m.error.count = j.at("vertices").get<std::size_t>();
    } else {
      m.accuracy = j.at("accuracy").get<double>();
    }
    if (m.task == Task::Correspondence)
      for (const auto& p : j.at("curve")) m.curve.push_back({p.at("radius").get<double>(), p.at("accuracy").get<double>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("metrics json: ") + e.what());
  }
}

/// Plot-ready table: the accuracy curve for correspondence, one summary row otherwise.
inline std::string metrics_to_csv(const Metrics& m) {
  switch (m.task) {
    case Task::Reconstruction:
      return to_csv({"mean_error", "std_error", "median_error", "loss"},
                    Tensor<double>(1, 4, {m.error.mean, m.error.std, m.error.median, m.loss}));
    case Task::Correspondence: {
      Tensor<double> t(m.curve.size(), 2);
      for (std::size_t i = 0; i < m.curve.size(); ++i) {
        t(i, 0) = m.curve[i].radius;
        t(i, 1) = m.curve[i].accuracy;
      }
      return to_csv({"radius", "accuracy"}, t);
    }
    case Task::Classification:
      return to_csv({"accuracy", "loss"}, Tensor<double>(1, 2, {m.accuracy, m.loss}));
  }
  return {};
}

inline std::string train_log_to_csv(const std::vector<EpochLog>& log) {
  Tensor<double> t(log.size(), 3);
  for (std::size_t i = 0; i < log.size(); ++i) {
    t(i, 0) = static_cast<double>(log[i].epoch);
    t(i, 1) = log[i].lr;
    t(i, 2) = log[i].train_loss;
  }
  return to_csv({"epoch", "lr", "train_loss"}, t);
}

}  // namespace affconv::train
