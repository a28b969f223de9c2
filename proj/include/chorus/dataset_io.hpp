#pragma once

#include <string>
#include <vector>

#include "chorus/shiftlab.hpp"
#include "chorus/streaming.hpp"

namespace chorus::dataset_io {

// JSON-lines dataset: a header record carrying the full SyntheticSpec followed
// by one record per sample. Deterministic bytes for a given dataset.
void save_dataset(const std::string& path, const shiftlab::Dataset& dataset);
shiftlab::Dataset load_dataset(const std::string& path);

// JSON-lines stream traces.
void save_trace(const std::string& path, const std::vector<streaming::StreamEvent>& trace);
std::vector<streaming::StreamEvent> load_trace(const std::string& path, const ModelDims& dims);

// Shared helper: atomic text-file write (temp + rename).
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace chorus::dataset_io
