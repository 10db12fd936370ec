#pragma once

// Code version folded into the manifest hash: bumping it invalidates
// cross-version byte comparisons on purpose.
#define NFTL_VERSION "0.1.0"
