#ifndef GTF_GTFRNN_HPP
#define GTF_GTFRNN_HPP

#include <gtf/benchmark_systems.hpp>
#include <gtf/checkpoint.hpp>
#include <gtf/common.hpp>
#include <gtf/config.hpp>
#include <gtf/data_io.hpp>
#include <gtf/dataset.hpp>
#include <gtf/experiment.hpp>
#include <gtf/forcing.hpp>
#include <gtf/invariant_sets.hpp>
#include <gtf/linalg.hpp>
#include <gtf/metrics.hpp>
#include <gtf/radam.hpp>
#include <gtf/report.hpp>
#include <gtf/shplrnn.hpp>
#include <gtf/signal.hpp>
#include <gtf/trainer.hpp>

#endif  // GTF_GTFRNN_HPP
