"""Region-adaptive image tokenizer, generators and evaluation harness."""
