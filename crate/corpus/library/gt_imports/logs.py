# Import block of the reference Python implementation of Logs.
from flask import Flask, jsonify, request
from pymongo import MongoClient
from bson import ObjectId
import os
