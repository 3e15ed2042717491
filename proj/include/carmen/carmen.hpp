// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "carmen/error.hpp"
#include "carmen/fxp.hpp"
#include "carmen/cordic.hpp"
#include "carmen/mac.hpp"
#include "carmen/afu.hpp"
#include "carmen/peripherals.hpp"
#include "carmen/model_io.hpp"
#include "carmen/engine.hpp"
#include "carmen/report.hpp"
#include "carmen/cli.hpp"
