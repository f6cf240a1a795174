// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0
