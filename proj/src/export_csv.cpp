#include "tstok/export_csv.hpp"

#include <cstdio>
#include <fstream>

#include "tstok/regularizers.hpp"

namespace tstok {

void export_pca(const EmbeddingMatrix& emb, const std::string& csv_path) {
    if (emb.ts_count() < 4) {
        throw DataError("container TS block too small to project");
    }
    const MatrixRM block = emb.ts_block();
    const GeometryContext ctx = fit_projection(block);

    std::ofstream out(csv_path);
    if (!out) {
        throw DataError("cannot write " + csv_path);
    }
    out << "index,value,pc1_2d,pc2_2d,pc1_3d,pc2_3d,pc3_3d\n";
    char buf[256];
    for (int i = 0; i < emb.ts_count(); ++i) {
        const double value = -1.0 + static_cast<double>(i) * emb.epsilon;
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", i, value,
                      ctx.projected(i, 0), ctx.projected(i, 1), ctx.projected(i, 0),
                      ctx.projected(i, 1), ctx.projected(i, 2));
        out << buf;
    }
}

}  // namespace tstok
