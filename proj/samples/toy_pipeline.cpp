// Trains the three model variants on a toy cluster dataset and compares their
// retrieval MAP against random-hyperplane LSH.
#include <cstdio>
#include <cstdlib>

#include "dcdh/dcdh.hpp"

int main(int argc, char** argv) {
  using namespace dcdh;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;

  const Dataset data = synth_clusters(600, 16, 3, 1.0, seed);
  const Split split = split_query_database(data, 60, seed);
  const Dataset query = data.subset(split.query_indices);
  const Dataset db = data.subset(split.database_indices);

  for (Mode mode : {Mode::full, Mode::semantic, Mode::visual}) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.mode = mode;
    const Model model = train(db, cfg);
    const auto report = evaluate(pack_codes(encode(query.features(), model)), pack_codes(model.codes),
                                 query.labels(), db.labels(), {10, 100});
    std::printf("%-5s MAP %.4f  P@10 %.4f  P@100 %.4f\n", std::string(to_string(mode)).c_str(),
                report.map.map, report.precision[0], report.precision[1]);
  }

  const auto lsh = evaluate(pack_codes(lsh_codes(query.features(), 16, seed)),
                            pack_codes(lsh_codes(db.features(), 16, seed)), query.labels(),
                            db.labels(), {10, 100});
  std::printf("lsh   MAP %.4f  P@10 %.4f  P@100 %.4f\n", lsh.map.map, lsh.precision[0],
              lsh.precision[1]);
  return 0;
}
