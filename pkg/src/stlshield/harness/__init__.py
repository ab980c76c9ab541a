"""Command-line harness: experiment configs, batch statistics, rendering."""
