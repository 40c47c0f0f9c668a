# Utilities: persistence and plotting
