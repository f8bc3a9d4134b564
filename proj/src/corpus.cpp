#include "deconf/corpus.hpp"

#include <fstream>
#include <random>

#include "deconf/errors.hpp"

namespace deconf {

void CorpusSpec::validate() const {
  if (markers_per_set <= 0) throw ValidationError("corpus: markers_per_set must be positive");
  if (vocab_size <= first_neutral()) throw ValidationError("corpus: vocabulary has no neutral tokens");
  if (min_len <= 0 || max_len < min_len) throw ValidationError("corpus: need 0 < min_len <= max_len");
  if (!(marker_rate_primary >= 0 && marker_rate_primary <= 1) ||
      !(marker_rate_confounder >= 0 && marker_rate_confounder <= 1)) {
    throw ValidationError("corpus: marker rates must lie in [0, 1]");
  }
  if (pool_size_per_cell == 0) throw ValidationError("corpus: pool_size_per_cell must be positive");
}

bool CorpusSpec::is_primary_marker(int token, int y_p) const {
  return token >= primary_marker(y_p, 0) && token < primary_marker(y_p, 0) + markers_per_set;
}

bool CorpusSpec::is_confounder_marker(int token, int y_c) const {
  return token >= confounder_marker(y_c, 0) && token < confounder_marker(y_c, 0) + markers_per_set;
}

Dataset generate_pool(const CorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> marker(0, spec.markers_per_set - 1);
  std::uniform_int_distribution<int> neutral(spec.first_neutral(), spec.vocab_size - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset pool;
  pool.reserve(4 * spec.pool_size_per_cell);
  for (int y_p = 0; y_p <= 1; ++y_p) {
    for (int y_c = 0; y_c <= 1; ++y_c) {
      for (std::size_t i = 0; i < spec.pool_size_per_cell; ++i) {
        Example e;
        e.y_p = y_p;
        e.y_c = y_c;
        e.source_id = "syn-p" + std::to_string(y_p) + "c" + std::to_string(y_c) + "-" + std::to_string(i);
        const int len = length(rng);
        e.token_ids.reserve(static_cast<std::size_t>(len));
        for (int t = 0; t < len; ++t) {
          if (unit(rng) < spec.marker_rate_primary) {
            e.token_ids.push_back(spec.primary_marker(y_p, marker(rng)));
          } else if (unit(rng) < spec.marker_rate_confounder) {
            e.token_ids.push_back(spec.confounder_marker(y_c, marker(rng)));
          } else {
            e.token_ids.push_back(neutral(rng));
          }
        }
        pool.push_back(std::move(e));
      }
    }
  }
  return pool;
}

void write_vocabulary(std::ostream& out, const CorpusSpec& spec) {
  spec.validate();
  for (int id = 0; id < spec.vocab_size; ++id) {
    std::string name;
    if (id < spec.first_neutral()) {
      const int set = id / spec.markers_per_set;
      name = std::string(set < 2 ? "p" : "c") + std::to_string(set % 2) + "_" +
             std::to_string(id % spec.markers_per_set);
    } else {
      name = "n_" + std::to_string(id - spec.first_neutral());
    }
    out << id << '\t' << name << '\n';
  }
}

void write_vocabulary(const std::filesystem::path& path, const CorpusSpec& spec) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_vocabulary(out, spec);
}

}  // namespace deconf
