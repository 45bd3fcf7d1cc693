// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Core library. The command-line layer (cli.hpp) and result writers
// (outputs.hpp) also need the vendored CLI11 and JSON headers and are not
// included here.

#include "fedmpq/baselines.hpp"
#include "fedmpq/bytes.hpp"
#include "fedmpq/codebook_service.hpp"
#include "fedmpq/config.hpp"
#include "fedmpq/dataset.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/kmeans.hpp"
#include "fedmpq/model.hpp"
#include "fedmpq/packet.hpp"
#include "fedmpq/pq_codec.hpp"
#include "fedmpq/secure_agg.hpp"
#include "fedmpq/seed.hpp"
#include "fedmpq/simulator.hpp"
#include "fedmpq/train.hpp"
#include "fedmpq/verify.hpp"
