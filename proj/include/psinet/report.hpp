#pragma once

// CSV emission for training logs and metric reports.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "psinet/config.hpp"
#include "psinet/loss.hpp"
#include "psinet/metrics.hpp"

namespace psinet {

inline std::string csv_value(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline void write_loss_header(std::ostream& os) {
  os << "step,epoch,mask_loss,contour_loss,distance_loss,total\n";
}

inline void write_loss_row(std::ostream& os, std::size_t step, std::size_t epoch, const LossBreakdown& b) {
  os << step << ',' << epoch << ',' << format_double(b.mask_loss) << ',' << format_double(b.contour_loss)
     << ',' << format_double(b.distance_loss) << ',' << format_double(b.total) << '\n';
}

inline void write_trimap_columns(std::ostream& os, const std::vector<std::size_t>& widths) {
  for (std::size_t w : widths) os << ",trimap_" << w;
}

/// sample_id,class,dice,jaccard,hausdorff,trimap_<w>...
inline void write_sample_header(std::ostream& os, const std::vector<std::size_t>& widths) {
  os << "sample_id,class,dice,jaccard,hausdorff";
  write_trimap_columns(os, widths);
  os << '\n';
}

inline void write_sample_rows(std::ostream& os, const std::string& id, const MetricReport& r) {
  for (const auto& m : r.classes) {
    os << id << ',' << static_cast<int>(m.cls) << ',' << format_double(m.dice) << ','
       << format_double(m.jaccard) << ',' << csv_value(m.hausdorff);
    for (const auto& t : m.trimap) os << ',' << csv_value(t.error_fraction);
    os << '\n';
  }
}

/// Aggregate rows: means with undefined Hausdorff values excluded and counted.
inline void write_aggregate_header(std::ostream& os, const std::vector<std::size_t>& widths,
                                   const std::string& leading = "") {
  os << leading << "class,samples,dice,jaccard,hausdorff,hausdorff_undefined";
  write_trimap_columns(os, widths);
  os << '\n';
}

inline void write_aggregate_rows(std::ostream& os, const std::vector<ClassAggregate>& agg,
                                 const std::string& leading = "") {
  for (const auto& a : agg) {
    os << leading << static_cast<int>(a.cls) << ',' << a.samples << ',' << format_double(a.dice) << ','
       << format_double(a.jaccard) << ',' << csv_value(a.hausdorff) << ',' << a.hausdorff_undefined;
    for (const auto& t : a.trimap) os << ',' << csv_value(t.error_fraction);
    os << '\n';
  }
}

}  // namespace psinet
