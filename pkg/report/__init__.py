"""Plot-data builders and result loaders for the experiment outputs."""
