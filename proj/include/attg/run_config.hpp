#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attg/data.hpp"
#include "attg/train.hpp"

namespace attg {

// Flat key=value description of a training run. Only known keys are accepted, so a written
// config can be fed back with --config to replay the run exactly.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string default_value;
  };
  static const std::vector<Key>& keys();

  RunConfig();
  static RunConfig parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  std::string to_text() const;

  // Model geometry comes from the dataset; everything else from this config.
  TrainOptions train_options(const DataConfig& data) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace attg
