#pragma once

#include <string>

#include "kflab/expert.hpp"

namespace kflab::expert {

// Line-delimited UTF-8 records. First line is a header object carrying
// format_version, spec, spec digest, generation seed, style mix, record
// counts and the content digest; each trajectory follows as one metadata
// line plus one line per tick. Numbers are decimal text.
void write_dataset(const DemoDataset& ds, const std::string& path);

// Rejects unknown format versions, truncated files and digest mismatches.
DemoDataset read_dataset(const std::string& path);

}  // namespace kflab::expert
